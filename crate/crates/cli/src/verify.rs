//! The property suite behind `verify`.

use bbgky::combinatorics::ClusterSpec;
use bbgky::dynamics::{apply_lifted, validate_kernels, Dynamics, InteractionMask};
use bbgky::hierarchies::{
    bbgky_evolve, conjugated_lambda, conjugated_lambda_star, cumulant_apply, cumulant_norm_bound,
    double_commutator_annihilation, double_commutator_creation, dual_bbgky_evolve, generator_b, generator_bstar,
};
use bbgky::meanfield::{dual_vlasov_evolve, f1_series, limit_dual_evolve, state_vlasov_hierarchy_evolve};
use bbgky::state_space::{pair, Kind, TensorFunction};
use rand::Rng;

use crate::config::{ExperimentConfig, Scenario};
use crate::error::CliError;
use crate::report::CheckEntry;
use crate::scenarios::{random_observables, random_states, run_scenario};

pub const ANCHOR_KERNELS: &str = "kernel normalization and rate bounds";
pub const ANCHOR_DUALITY: &str = "duality of the hierarchy groups";
pub const ANCHOR_RATES: &str = "vanishing rates of semigroup cumulants";
pub const ANCHOR_CUMULANT_BOUND: &str = "sup-norm bound of semigroup cumulants";
pub const ANCHOR_CONJUGATION: &str = "hierarchy generators as conjugated sums of generators";
pub const ANCHOR_LIMIT_OPERATORS: &str = "iterated-integral limit vs dual limit hierarchy";
pub const ANCHOR_SERIES: &str = "one-particle series vs limit state hierarchy";

fn sup(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Runs every check on the configured model. Returns the checks and the
/// dressing selected by the kinetic scenarios.
pub fn verify_suite(cfg: &ExperimentConfig) -> Result<(Vec<CheckEntry>, Option<String>), CliError> {
    let mut checks = Vec::new();
    let (space, kernels) = cfg.raw_model()?;
    let diag = validate_kernels(&kernels, &space);
    checks.push(CheckEntry::at_most(
        "kernel normalization defect",
        ANCHOR_KERNELS,
        diag.one_body_defect.max(diag.two_body_defect),
        bbgky::dynamics::NORMALIZATION_TOL,
    ));
    checks.push(CheckEntry::at_most(
        "negative kernel entries and rate violations",
        ANCHOR_KERNELS,
        (diag.negative_entries + diag.rate_bound_violations) as f64,
        0.0,
    ));
    if !diag.passes {
        return Ok((checks, None));
    }
    let dy = Dynamics::new(space, kernels)?;
    checks.extend(hierarchy_checks(cfg, &dy)?);
    checks.extend(limit_checks(cfg, &dy)?);

    let mut dressing = None;
    let last = *cfg.run.times.last().expect("validated nonempty");
    for scenario in Scenario::ALL {
        let mut sub = cfg.clone();
        sub.scenario = scenario;
        if scenario == Scenario::JumpEvolve {
            sub.run.times = vec![last];
        }
        let res = run_scenario(&sub)?;
        if let Some(d) = res.dressing {
            dressing = Some(d.name().to_string());
        }
        checks.extend(res.checks.into_iter().map(|mut c| {
            c.name = format!("{}: {}", scenario.name(), c.name);
            c
        }));
    }
    Ok((checks, dressing))
}

fn hierarchy_checks(cfg: &ExperimentConfig, dy: &Dynamics) -> Result<Vec<CheckEntry>, CliError> {
    let tol = &cfg.tolerances;
    let eps = cfg.run.epsilon;
    let k = dy.states();
    let s_max = cfg.run.s_max;
    let mut rng = cfg.rng(0x76657269);
    let mut checks = Vec::new();

    let b = random_observables(&mut rng, k, s_max, cfg.run.gamma);
    let f = random_states(&mut rng, k, s_max);
    let mut worst: f64 = 0.0;
    for &t in &cfg.run.times {
        let lhs = pair(&dual_bbgky_evolve(dy, &b, t, eps)?, &f, dy.space(), false)?;
        let rhs = pair(&b, &bbgky_evolve(dy, &f, t, eps)?, dy.space(), false)?;
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE));
    }
    checks.push(CheckEntry::at_most("relative duality residual", ANCHOR_DUALITY, worst, tol.duality));

    // rates: t = 1e-2 against t = 1e-3 on three entities
    let s = 3;
    dy.space().check_order(s)?;
    let dim = dy.space().dim(s);
    let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let lambda_x = dy.apply_generator(s, eps, Kind::Observable, InteractionMask::FULL, &x);
    let first = ClusterSpec::removing(s, &[])?;
    let r1 = |t: f64| -> Result<f64, CliError> {
        let y = cumulant_apply(dy, t, eps, &first, Kind::Observable, &x)?;
        let d: Vec<f64> = y.iter().zip(&x).map(|(a, c)| (a - c) / t).collect();
        Ok(sup_diff(&d, &lambda_x))
    };
    checks.push(CheckEntry::at_least("first-order cumulant rate shrink", ANCHOR_RATES, r1(1e-2)? / r1(1e-3)?, tol.min_rate_shrink));

    let j = s - 1;
    let reduced = TensorFunction::from_values(k, 2, Kind::Observable, x[..k * k].to_vec())?
        .embed(s, &[0, 1])?
        .into_values();
    let mut want = vec![0.0; dim];
    for i in 0..j {
        apply_lifted(dy.two_body(Kind::Observable), k, &[i, j], s, &reduced, &mut want, eps);
    }
    let second = ClusterSpec::removing(s, &[j])?;
    let r2 = |t: f64| -> Result<f64, CliError> {
        let y = cumulant_apply(dy, t, eps, &second, Kind::Observable, &reduced)?;
        let d: Vec<f64> = y.iter().map(|v| v / t).collect();
        Ok(sup_diff(&d, &want))
    };
    checks.push(CheckEntry::at_least("second-order cumulant rate shrink", ANCHOR_RATES, r2(1e-2)? / r2(1e-3)?, tol.min_rate_shrink));

    let mut worst_bound: f64 = 0.0;
    for n in 1..=3usize {
        if dy.space().check_order(n + 1).is_err() {
            break;
        }
        let spec = ClusterSpec::removing(n + 1, &(1..=n).collect::<Vec<_>>())?;
        let y: Vec<f64> = (0..dy.space().dim(n + 1)).map(|_| rng.random_range(-1.0..1.0)).collect();
        if n >= 2 {
            let r = |t: f64| -> Result<f64, CliError> { Ok(sup(&cumulant_apply(dy, t, eps, &spec, Kind::Observable, &y)?) / t) };
            checks.push(CheckEntry::at_least(
                format!("order {} cumulant over t shrink", n + 1),
                ANCHOR_RATES,
                r(1e-2)? / r(1e-3)?,
                tol.min_rate_shrink,
            ));
        }
        for &t in cfg.run.times.iter().filter(|t| **t <= 1.0) {
            let z = cumulant_apply(dy, t, eps, &spec, Kind::Observable, &y)?;
            worst_bound = worst_bound.max(sup(&z) / (cumulant_norm_bound(n) * sup(&y)));
        }
    }
    checks.push(CheckEntry::at_most("cumulant sup-norm relative to its bound", ANCHOR_CUMULANT_BOUND, worst_bound, 1.0));

    let bs = random_observables(&mut rng, k, s_max, cfg.run.gamma);
    let fs = random_states(&mut rng, k, s_max);
    let c = tol.conjugation;
    checks.push(CheckEntry::at_most(
        "dual generator vs conjugated sum",
        ANCHOR_CONJUGATION,
        generator_b(dy, &bs, eps)?.max_abs_diff(&conjugated_lambda(dy, &bs, eps)?),
        c,
    ));
    checks.push(CheckEntry::at_most(
        "forward generator vs conjugated sum",
        ANCHOR_CONJUGATION,
        generator_bstar(dy, &fs, eps)?.max_abs_diff(&conjugated_lambda_star(dy, &fs, eps)?),
        c,
    ));
    checks.push(CheckEntry::at_most(
        "double commutator with creation",
        ANCHOR_CONJUGATION,
        double_commutator_creation(dy, &bs, eps)?.max_abs(),
        c,
    ));
    checks.push(CheckEntry::at_most(
        "double commutator with annihilation",
        ANCHOR_CONJUGATION,
        double_commutator_annihilation(dy, &fs, eps)?.max_abs(),
        c,
    ));
    Ok(checks)
}

fn limit_checks(cfg: &ExperimentConfig, dy: &Dynamics) -> Result<Vec<CheckEntry>, CliError> {
    let settings = cfg.numerics.settings();
    let t = *cfg.run.times.last().expect("validated nonempty");
    let mut rng = cfg.rng(0x6c696d);
    let s_max = cfg.run.s_max.min(settings.max_levels + 1);
    let b = random_observables(&mut rng, dy.states(), s_max, cfg.run.gamma);
    let quad = limit_dual_evolve(dy, &b, t, &settings)?;
    let ode = dual_vlasov_evolve(dy, &b, t, &settings)?;
    let mut checks = vec![CheckEntry::at_most(
        "limit observables by quadrature vs by integration",
        ANCHOR_LIMIT_OPERATORS,
        quad.max_abs_diff(&ode),
        cfg.tolerances.limit_operators,
    )];

    let top = cfg.run.truncation.min(settings.max_levels + 1);
    let init = cfg.correlated_state(dy.space(), top)?;
    let series = f1_series(dy, &init, t, top - 1, &settings)?;
    let hier = state_vlasov_hierarchy_evolve(dy, &init.assemble(), t, &settings)?;
    checks.push(CheckEntry::at_most(
        "one-particle series vs state hierarchy",
        ANCHOR_SERIES,
        series.f1.max_abs_diff(hier.component(1)),
        cfg.tolerances.kinetic,
    ));
    Ok(checks)
}
