//! Experiment configuration: a versioned TOML document with a strict schema.

use std::path::PathBuf;

use bbgky::dynamics::{validate_kernels, Dynamics, KernelSet};
use bbgky::meanfield::{CorrelatedInitialState, Dressing, LimitSettings};
use bbgky::state_space::{EntitySpace, Kind, TensorFunction};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CONFIG_VERSION: u32 = 1;

/// Bundled desk-scale configuration used when no `--config` is given.
pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.toml");

/// Environment variable naming an alternative default configuration file.
pub const DEFAULT_CONFIG_ENV: &str = "BBGKY_DEFAULT_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    JumpEvolve,
    BbgkyEvolve,
    DualBbgkyEvolve,
    MeanfieldScan,
    Vlasov,
    PropagationCheck,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::JumpEvolve,
        Scenario::BbgkyEvolve,
        Scenario::DualBbgkyEvolve,
        Scenario::MeanfieldScan,
        Scenario::Vlasov,
        Scenario::PropagationCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::JumpEvolve => "jump-evolve",
            Scenario::BbgkyEvolve => "bbgky-evolve",
            Scenario::DualBbgkyEvolve => "dual-bbgky-evolve",
            Scenario::MeanfieldScan => "meanfield-scan",
            Scenario::Vlasov => "vlasov",
            Scenario::PropagationCheck => "propagation-check",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub scenario: Scenario,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub space: SpaceConfig,
    pub kernels: KernelConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub numerics: NumericsConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    #[serde(default = "one")]
    pub subpopulations: usize,
    pub grid_len: usize,
    /// One positive weight per state; uniform `1 / grid_len` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelSource {
    UniformRedistribution,
    LocalDiffusion,
    Alignment,
    /// Random normalized kernels drawn from the master seed.
    Random,
    /// Tables given under `kernels.inline`.
    Inline,
}

impl KernelSource {
    fn catalog_name(self) -> Option<&'static str> {
        match self {
            KernelSource::UniformRedistribution => Some("uniform-redistribution"),
            KernelSource::LocalDiffusion => Some("local-diffusion"),
            KernelSource::Alignment => Some("alignment"),
            KernelSource::Random | KernelSource::Inline => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub source: KernelSource,
    /// One-body rate (upper bound for `random`).
    #[serde(default = "one_f")]
    pub rate1: f64,
    /// Two-body rate (upper bound for `random`).
    #[serde(default = "default_rate2")]
    pub rate2: f64,
    /// Spread of the local-diffusion and alignment kernels.
    #[serde(default = "default_width")]
    pub width: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inline: Option<InlineKernels>,
}

/// Explicit kernel tables. `jump1[v][u] = A1(v; u)`, `a2[u1][u2]`,
/// `jump2` flattened as `(v * K + u1) * K + u2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineKernels {
    pub a1: Vec<f64>,
    pub jump1: Vec<Vec<f64>>,
    pub a2: Vec<Vec<f64>>,
    pub jump2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Scaling parameter of the two-body term.
    pub epsilon: f64,
    /// Scaling parameters of the mean-field scan.
    pub epsilons: Vec<f64>,
    pub times: Vec<f64>,
    /// Top order of observable sequences.
    pub s_max: usize,
    /// Top order of state sequences and correlation factors.
    pub truncation: usize,
    /// Number of entities in the jump scenario.
    pub entities: usize,
    pub replicas: usize,
    pub gamma: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.5,
            epsilons: vec![0.2, 0.1, 0.05, 0.025],
            times: vec![0.25, 0.5, 0.75, 1.0],
            s_max: 3,
            truncation: 5,
            entities: 3,
            replicas: 20_000,
            gamma: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DressingChoice {
    /// Pick the reading that passes the interaction-free test.
    Auto,
    LiteralForward,
    InverseDressed,
}

impl DressingChoice {
    pub fn fixed(self) -> Option<Dressing> {
        match self {
            DressingChoice::Auto => None,
            DressingChoice::LiteralForward => Some(Dressing::LiteralForward),
            DressingChoice::InverseDressed => Some(Dressing::InverseDressed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialConfig {
    /// Pair factor values are drawn from `1 +- pair_amplitude`.
    pub pair_amplitude: f64,
    pub dressing: DressingChoice,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self {
            pair_amplitude: 0.15,
            dressing: DressingChoice::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsConfig {
    pub quad_order: usize,
    pub max_levels: usize,
    pub ode_tol: f64,
    pub max_halvings: usize,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        let s = LimitSettings::default();
        Self {
            quad_order: s.quad_order,
            max_levels: s.max_levels,
            ode_tol: s.ode_tol,
            max_halvings: s.max_halvings,
        }
    }
}

impl NumericsConfig {
    pub fn settings(&self) -> LimitSettings {
        LimitSettings {
            quad_order: self.quad_order,
            max_levels: self.max_levels,
            ode_tol: self.ode_tol,
            max_halvings: self.max_halvings,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub duality: f64,
    pub conjugation: f64,
    pub mass: f64,
    pub kinetic: f64,
    pub adjudication: f64,
    pub limit_operators: f64,
    pub min_slope: f64,
    pub min_rate_shrink: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            duality: 1e-9,
            conjugation: 1e-10,
            mass: 1e-10,
            kinetic: 1e-6,
            adjudication: 1e-9,
            limit_operators: 1e-6,
            min_slope: 0.9,
            min_rate_shrink: 5.0,
        }
    }
}

/// Parameter grid of the `sweep` command. Missing axes take the single value
/// from `run`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilons: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncations: Option<Vec<usize>>,
}

fn one() -> usize {
    1
}

fn one_f() -> f64 {
    1.0
}

fn default_rate2() -> f64 {
    0.1
}

fn default_width() -> f64 {
    0.5
}

fn bad(key: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

fn positive_list(key: &str, v: &[f64]) -> Result<(), CliError> {
    if v.is_empty() {
        return Err(bad(key, "must not be empty"));
    }
    if let Some(x) = v.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(bad(key, format!("entries must be positive and finite, found {x}")));
    }
    Ok(())
}

fn time_list(key: &str, v: &[f64]) -> Result<(), CliError> {
    if v.is_empty() {
        return Err(bad(key, "must not be empty"));
    }
    if v.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || v.windows(2).any(|w| w[1] < w[0]) {
        return Err(bad(key, "times must be finite, nonnegative and nondecreasing"));
    }
    Ok(())
}

impl ExperimentConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| bad("document", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable as TOML")
    }

    pub fn bundled_default() -> Self {
        Self::from_toml(DEFAULT_CONFIG).expect("bundled configuration is valid")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.version != CONFIG_VERSION {
            return Err(bad("version", format!("unsupported version {}, expected {CONFIG_VERSION}", self.version)));
        }
        // TOML integers are signed 64-bit
        if i64::try_from(self.seed).is_err() {
            return Err(bad("seed", format!("must not exceed {}", i64::MAX)));
        }
        let sp = &self.space;
        if sp.subpopulations == 0 {
            return Err(bad("space.subpopulations", "must be at least 1"));
        }
        if sp.grid_len == 0 {
            return Err(bad("space.grid_len", "must be at least 1"));
        }
        if let Some(w) = &sp.weights {
            if w.len() != sp.subpopulations * sp.grid_len {
                return Err(bad(
                    "space.weights",
                    format!("expected {} entries, found {}", sp.subpopulations * sp.grid_len, w.len()),
                ));
            }
            positive_list("space.weights", w)?;
        }
        let k = &self.kernels;
        for (key, v) in [("kernels.rate1", k.rate1), ("kernels.rate2", k.rate2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(bad(key, format!("must be nonnegative and finite, found {v}")));
            }
        }
        if !(k.width.is_finite() && k.width > 0.0) {
            return Err(bad("kernels.width", "must be positive"));
        }
        match (k.source, &k.inline) {
            (KernelSource::Inline, None) => return Err(bad("kernels.inline", "required when source = \"inline\"")),
            (KernelSource::Inline, Some(_)) | (_, None) => {}
            (_, Some(_)) => return Err(bad("kernels.inline", "only allowed when source = \"inline\"")),
        }
        let r = &self.run;
        if !(r.epsilon.is_finite() && r.epsilon > 0.0) {
            return Err(bad("run.epsilon", "must be positive"));
        }
        positive_list("run.epsilons", &r.epsilons)?;
        time_list("run.times", &r.times)?;
        if r.s_max == 0 {
            return Err(bad("run.s_max", "must be at least 1"));
        }
        if r.truncation < 2 {
            return Err(bad("run.truncation", "must be at least 2"));
        }
        if r.entities == 0 {
            return Err(bad("run.entities", "must be at least 1"));
        }
        if r.replicas == 0 {
            return Err(bad("run.replicas", "must be at least 1"));
        }
        if !(r.gamma > 0.0 && r.gamma < (-1.0f64).exp()) {
            return Err(bad("run.gamma", "must lie in (0, 1/e)"));
        }
        let a = self.initial.pair_amplitude;
        if !(0.0..1.0).contains(&a) {
            return Err(bad("initial.pair_amplitude", "must lie in [0, 1)"));
        }
        let n = &self.numerics;
        if n.quad_order < 2 {
            return Err(bad("numerics.quad_order", "must be at least 2"));
        }
        if !(n.ode_tol.is_finite() && n.ode_tol > 0.0) {
            return Err(bad("numerics.ode_tol", "must be positive"));
        }
        let t = &self.tolerances;
        for (key, v) in [
            ("tolerances.duality", t.duality),
            ("tolerances.conjugation", t.conjugation),
            ("tolerances.mass", t.mass),
            ("tolerances.kinetic", t.kinetic),
            ("tolerances.adjudication", t.adjudication),
            ("tolerances.limit_operators", t.limit_operators),
            ("tolerances.min_slope", t.min_slope),
            ("tolerances.min_rate_shrink", t.min_rate_shrink),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(bad(key, "must be positive"));
            }
        }
        if let Some(sw) = &self.sweep {
            if let Some(e) = &sw.epsilons {
                positive_list("sweep.epsilons", e)?;
            }
            if let Some(ts) = &sw.times {
                if ts.is_empty() || ts.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
                    return Err(bad("sweep.times", "must be a nonempty list of nonnegative times"));
                }
            }
            if let Some(tr) = &sw.truncations {
                if tr.is_empty() || tr.iter().any(|n| *n < 2) {
                    return Err(bad("sweep.truncations", "must be a nonempty list of values >= 2"));
                }
            }
        }
        Ok(())
    }

    pub fn entity_space(&self) -> Result<EntitySpace, CliError> {
        let sp = &self.space;
        let uniform = EntitySpace::uniform(sp.subpopulations, sp.grid_len)?;
        match &sp.weights {
            None => Ok(uniform),
            Some(w) => Ok(EntitySpace::new(sp.subpopulations, uniform.grid().to_vec(), w.clone())?),
        }
    }

    fn kernel_set(&self, space: &EntitySpace) -> Result<KernelSet, CliError> {
        let k = &self.kernels;
        if let Some(name) = k.source.catalog_name() {
            return Ok(KernelSet::catalog(name, space, k.rate1, k.rate2, k.width)?);
        }
        if k.source == KernelSource::Random {
            let mut rng = self.rng(0x6b65726e);
            return Ok(KernelSet::random(space, &mut rng, k.rate1, k.rate2));
        }
        let t = k.inline.as_ref().expect("validated");
        let n = space.size();
        let square = |key: &str, rows: &[Vec<f64>]| -> Result<DMatrix<f64>, CliError> {
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(bad(key, format!("expected a {n} x {n} table")));
            }
            Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
        };
        if t.a1.len() != n {
            return Err(bad("kernels.inline.a1", format!("expected {n} entries")));
        }
        if t.jump2.len() != n * n * n {
            return Err(bad("kernels.inline.jump2", format!("expected {} entries", n * n * n)));
        }
        Ok(KernelSet::new(
            "inline",
            t.a1.clone(),
            square("kernels.inline.jump1", &t.jump1)?,
            square("kernels.inline.a2", &t.a2)?,
            t.jump2.clone(),
        )?)
    }

    /// Entity space and kernels without the normalization check.
    pub fn raw_model(&self) -> Result<(EntitySpace, KernelSet), CliError> {
        let space = self.entity_space()?;
        let kernels = self.kernel_set(&space)?;
        Ok((space, kernels))
    }

    /// Validated dynamics; a kernel set failing normalization is a config error.
    pub fn dynamics(&self) -> Result<Dynamics, CliError> {
        let (space, kernels) = self.raw_model()?;
        let diag = validate_kernels(&kernels, &space);
        if !diag.passes {
            return Err(bad(
                "kernels",
                format!(
                    "invalid kernels: one-body defect {:.3e}, two-body defect {:.3e}, {} negative entries, {} rate violations",
                    diag.one_body_defect, diag.two_body_defect, diag.negative_entries, diag.rate_bound_violations
                ),
            ));
        }
        Ok(Dynamics::new(space, kernels)?)
    }

    /// Independent generator for a named purpose, derived from the master seed.
    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(bbgky::dynamics::stream_seed(self.seed, stream))
    }

    /// Random positive one-particle density and pair factor `1 +- amplitude`,
    /// extended to `truncation` through the cluster relation.
    pub fn correlated_state(&self, space: &EntitySpace, truncation: usize) -> Result<CorrelatedInitialState, CliError> {
        let mut rng = self.rng(0x696e6974);
        let k = space.size();
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..1.5)).collect();
        let mass: f64 = raw.iter().zip(space.weights()).map(|(a, b)| a * b).sum();
        let f1 = TensorFunction::from_values(k, 1, Kind::State, raw.iter().map(|v| v / mass).collect())?;
        let amp = self.initial.pair_amplitude;
        let g2 = TensorFunction::from_fn(k, 2, Kind::State, |_| {
            1.0 + if amp > 0.0 { rng.random_range(-amp..amp) } else { 0.0 }
        })
        .symmetrize();
        Ok(CorrelatedInitialState::from_pair_correlation(f1, &g2, truncation, space)?)
    }
}
