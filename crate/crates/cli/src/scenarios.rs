//! Scenario execution. Each scenario produces one data table, a set of
//! checks and scalar summaries.

use std::collections::BTreeMap;

use bbgky::dynamics::{empirical_marginal, ensemble_final_states, stream_seed, Dynamics, InteractionMask};
use bbgky::hierarchies::{bbgky_evolve, dual_bbgky_evolve, dual_group_norm_bound};
use bbgky::meanfield::{
    adjudicate_dressing, correlations_propagation_check, kato_error, limit_f1, loglog_slope,
    scaled_expansion_error, vlasov_solve, AdjudicationReport, CorrelatedInitialState, Dressing,
};
use bbgky::state_space::{c_gamma_norm, marginal_by_integration, EntitySpace, Kind, SequenceVector, TensorFunction};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, Scenario};
use crate::error::CliError;
use crate::output::{num, Table};
use crate::report::CheckEntry;

pub const ANCHOR_STOCHASTIC: &str = "ensemble marginals match the exact forward semigroup";
pub const ANCHOR_MASS: &str = "conservation of total probability";
pub const ANCHOR_GROUP_BOUND: &str = "dual group bound in the C_gamma norm";
pub const ANCHOR_MEANFIELD: &str = "first-order convergence of the scaled cumulant expansion";
pub const ANCHOR_ONE_BODY: &str = "first-order convergence to the one-body product flow";
pub const ANCHOR_ADJUDICATION: &str = "interaction-free pair dressing";
pub const ANCHOR_KINETIC: &str = "kinetic equation with initial correlations vs limit one-particle density";
pub const ANCHOR_PROPAGATION: &str = "propagation of initial correlations";

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub table: Table,
    pub checks: Vec<CheckEntry>,
    pub summary: BTreeMap<String, f64>,
    pub dressing: Option<Dressing>,
}

impl ScenarioResult {
    fn new(table: Table) -> Self {
        Self {
            table,
            checks: Vec::new(),
            summary: BTreeMap::new(),
            dressing: None,
        }
    }
}

pub fn run_scenario(cfg: &ExperimentConfig) -> Result<ScenarioResult, CliError> {
    match cfg.scenario {
        Scenario::JumpEvolve => jump_evolve(cfg),
        Scenario::BbgkyEvolve => state_hierarchy(cfg),
        Scenario::DualBbgkyEvolve => observable_hierarchy(cfg),
        Scenario::MeanfieldScan => meanfield_scan(cfg),
        Scenario::Vlasov => vlasov(cfg),
        Scenario::PropagationCheck => propagation(cfg),
    }
}

/// Random observable sequence with entries in `[-1, 1]` up to `s_max`.
pub fn random_observables(rng: &mut ChaCha8Rng, k: usize, s_max: usize, gamma: f64) -> SequenceVector {
    let comps = (0..=s_max)
        .map(|n| TensorFunction::from_fn(k, n, Kind::Observable, |_| rng.random_range(-1.0..1.0)))
        .collect();
    SequenceVector::new(Kind::Observable, gamma, comps).expect("consistent shapes")
}

/// Random symmetric state sequence with entries in `[-1, 1]` up to `n_max`.
pub fn random_states(rng: &mut ChaCha8Rng, k: usize, n_max: usize) -> SequenceVector {
    let comps = (0..=n_max)
        .map(|n| TensorFunction::from_fn(k, n, Kind::State, |_| rng.random_range(-1.0..1.0)).symmetrize())
        .collect();
    SequenceVector::new(Kind::State, 1.0, comps).expect("consistent shapes")
}

fn last_time(cfg: &ExperimentConfig) -> f64 {
    *cfg.run.times.last().expect("validated nonempty")
}

fn push_sequence_rows(table: &mut Table, t: f64, seq: &SequenceVector, from: usize) {
    for order in from..=seq.max_order() {
        for (i, v) in seq.component(order).values().iter().enumerate() {
            table.push(vec![num(t), order.to_string(), i.to_string(), num(*v)]);
        }
    }
}

fn mass(f: &TensorFunction, space: &EntitySpace) -> f64 {
    f.integrate_all(space)
}

/// Exact `n`-entity evolution from a product state against a Gillespie
/// ensemble, compared through 1- and 2-entity marginals.
fn jump_evolve(cfg: &ExperimentConfig) -> Result<ScenarioResult, CliError> {
    let dy = cfg.dynamics()?;
    let sp = dy.space();
    let n = cfg.run.entities;
    sp.check_order(n)?;
    let init = cfg.correlated_state(sp, 2)?;
    let f0 = TensorFunction::power(Kind::State, init.f1().values(), n);
    let eps = cfg.run.epsilon;
    let replicas = cfg.run.replicas;
    let mut out = ScenarioResult::new(Table::new(&["t", "order", "flat_index", "exact", "empirical"]));
    let mut mass_defect: f64 = 0.0;
    let mut worst_ratio: f64 = 0.0;
    for (i, &t) in cfg.run.times.iter().enumerate() {
        let exact = TensorFunction::from_values(
            sp.size(),
            n,
            Kind::State,
            dy.evolve_vector(n, t, eps, Kind::State, InteractionMask::FULL, f0.values())?,
        )?;
        mass_defect = mass_defect.max((mass(&exact, sp) - 1.0).abs());
        let finals = ensemble_final_states(dy.kernels(), sp, &f0, eps, t, replicas, stream_seed(cfg.seed, i as u64 + 1));
        for m in 1..=n.min(2) {
            let want = marginal_by_integration(&exact, m, sp)?;
            let got = empirical_marginal(&finals, &(0..m).collect::<Vec<_>>(), sp)?;
            let w = sp.multi_weights(m);
            let mut tv = 0.0;
            let mut band = 0.0;
            for (j, ((a, b), wj)) in want.values().iter().zip(got.values()).zip(&w).enumerate() {
                let (p, q) = (a * wj, b * wj);
                tv += 0.5 * (p - q).abs();
                band += 0.5 * 3.0 * (p * (1.0 - p) / replicas as f64).max(0.0).sqrt();
                out.table.push(vec![num(t), m.to_string(), j.to_string(), num(*a), num(*b)]);
            }
            if band > 0.0 {
                worst_ratio = worst_ratio.max(tv / band);
            }
            out.checks.push(CheckEntry::at_most(
                format!("total variation of the {m}-entity marginal at t = {t} (3 sigma band)"),
                ANCHOR_STOCHASTIC,
                tv,
                band.max(f64::EPSILON),
            ));
        }
    }
    out.checks.push(CheckEntry::at_most("mass defect of the exact evolution", ANCHOR_MASS, mass_defect, cfg.tolerances.mass));
    out.summary.insert("mass_defect".into(), mass_defect);
    out.summary.insert("tv_to_band_ratio_max".into(), worst_ratio);
    Ok(out)
}

/// Marginal distribution functions of a correlated initial state evolved by
/// the finite-`eps` hierarchy.
fn state_hierarchy(cfg: &ExperimentConfig) -> Result<ScenarioResult, CliError> {
    let dy = cfg.dynamics()?;
    let n = cfg.run.truncation;
    let init = cfg.correlated_state(dy.space(), n)?;
    let f0 = init.assemble();
    let mut out = ScenarioResult::new(Table::new(&["t", "order", "flat_index", "value"]));
    let mut mass_defect: f64 = 0.0;
    for &t in &cfg.run.times {
        let ft = bbgky_evolve(&dy, &f0, t, cfg.run.epsilon)?;
        mass_defect = mass_defect.max((mass(ft.component(1), dy.space()) - 1.0).abs());
        push_sequence_rows(&mut out.table, t, &ft, 1);
    }
    out.checks.push(CheckEntry::at_most("one-particle mass defect", ANCHOR_MASS, mass_defect, cfg.tolerances.mass));
    out.summary.insert("mass_defect".into(), mass_defect);
    out.summary.insert("initial_min_value".into(), init.nonnegativity().min_value);
    Ok(out)
}

/// Random marginal observables evolved by the finite-`eps` dual hierarchy.
fn observable_hierarchy(cfg: &ExperimentConfig) -> Result<ScenarioResult, CliError> {
    let dy = cfg.dynamics()?;
    let gamma = cfg.run.gamma;
    let b = random_observables(&mut cfg.rng(0x6f6273), dy.states(), cfg.run.s_max, gamma);
    let b_norm = c_gamma_norm(&b)?;
    let mut out = ScenarioResult::new(Table::new(&["t", "order", "flat_index", "value"]));
    let mut growth: f64 = 0.0;
    for &t in &cfg.run.times {
        let u = dual_bbgky_evolve(&dy, &b, t, cfg.run.epsilon)?;
        growth = growth.max(c_gamma_norm(&u)? / b_norm);
        push_sequence_rows(&mut out.table, t, &u, 0);
    }
    out.summary.insert("c_gamma_growth".into(), growth);
    if let Some(bound) = dual_group_norm_bound(gamma) {
        out.checks.push(CheckEntry::at_most("C_gamma growth of the dual group", ANCHOR_GROUP_BOUND, growth, bound));
        out.summary.insert("c_gamma_bound".into(), bound);
    }
    Ok(out)
}

fn meanfield_scan(cfg: &ExperimentConfig) -> Result<ScenarioResult, CliError> {
    let dy = cfg.dynamics()?;
    let settings = cfg.numerics.settings();
    let s = cfg.run.s_max;
    let t = last_time(cfg);
    let b = random_observables(&mut cfg.rng(0x6f6273), dy.states(), s, cfg.run.gamma);
    let mut out = ScenarioResult::new(Table::new(&["epsilon", "expansion_error", "one_body_error"]));
    let mut expansion = Vec::new();
    let mut one_body = Vec::new();
    for &eps in &cfg.run.epsilons {
        let e = scaled_expansion_error(&dy, &b, t, eps, s, &settings)?;
        let k = kato_error(&dy, b.component(s), t, eps)?;
        out.table.push(vec![num(eps), num(e), num(k)]);
        expansion.push(e);
        one_body.push(k);
    }
    if cfg.run.epsilons.len() >= 2 {
        let se = loglog_slope(&cfg.run.epsilons, &expansion);
        let sk = loglog_slope(&cfg.run.epsilons, &one_body);
        out.checks.push(CheckEntry::at_least("log-log slope of the scaled expansion error", ANCHOR_MEANFIELD, se, cfg.tolerances.min_slope));
        out.checks.push(CheckEntry::at_least("log-log slope of the one-body semigroup error", ANCHOR_ONE_BODY, sk, cfg.tolerances.min_slope));
        out.summary.insert("expansion_error_slope".into(), se);
        out.summary.insert("one_body_error_slope".into(), sk);
    } else {
        out.summary.insert("expansion_error".into(), expansion[0]);
        out.summary.insert("one_body_error".into(), one_body[0]);
    }
    Ok(out)
}

/// Fixed reading from the configuration, or the one passing the
/// interaction-free test at time `t`.
fn choose_dressing(
    cfg: &ExperimentConfig,
    dy: &Dynamics,
    init: &CorrelatedInitialState,
    t: f64,
) -> Result<(Dressing, AdjudicationReport), CliError> {
    let adj = adjudicate_dressing(dy, init, t, cfg.tolerances.adjudication)?;
    Ok((cfg.initial.dressing.fixed().unwrap_or(adj.selected), adj))
}

fn adjudication_check(adj: &AdjudicationReport) -> CheckEntry {
    CheckEntry::at_most(
        format!("interaction-free pair dressing ({} selected)", adj.selected.name()),
        ANCHOR_ADJUDICATION,
        adj.residual_literal_forward.min(adj.residual_inverse_dressed),
        adj.tolerance,
    )
}

fn adjudication_summary(out: &mut ScenarioResult, adj: &AdjudicationReport) {
    out.summary.insert("adjudication_residual_literal_forward".into(), adj.residual_literal_forward);
    out.summary.insert("adjudication_residual_inverse_dressed".into(), adj.residual_inverse_dressed);
}

fn vlasov(cfg: &ExperimentConfig) -> Result<ScenarioResult, CliError> {
    let dy = cfg.dynamics()?;
    let settings = cfg.numerics.settings();
    let init = cfg.correlated_state(dy.space(), cfg.run.truncation)?;
    let (dressing, adj) = choose_dressing(cfg, &dy, &init, last_time(cfg))?;
    let traj = vlasov_solve(&dy, &init, &cfg.run.times, dressing, &settings)?;
    let mut out = ScenarioResult::new(Table::new(&["t", "flat_index", "f1"]));
    let mut gap: f64 = 0.0;
    for (t, f1) in traj.times.iter().zip(&traj.f1) {
        for (i, v) in f1.values().iter().enumerate() {
            out.table.push(vec![num(*t), i.to_string(), num(*v)]);
        }
        gap = gap.max(f1.max_abs_diff(&limit_f1(&dy, &init, *t, &settings)?));
    }
    let mass_defect = traj.mass_defect(dy.space());
    out.checks.push(CheckEntry::at_most("one-particle mass defect", ANCHOR_MASS, mass_defect, cfg.tolerances.mass));
    out.checks.push(adjudication_check(&adj));
    out.checks.push(
        CheckEntry::at_most("kinetic equation vs limit one-particle density", ANCHOR_KINETIC, gap, cfg.tolerances.kinetic)
            .informational(),
    );
    out.summary.insert("mass_defect".into(), mass_defect);
    out.summary.insert("kinetic_vs_limit".into(), gap);
    out.summary.insert("rk4_steps".into(), traj.steps.iter().sum::<usize>() as f64);
    adjudication_summary(&mut out, &adj);
    out.dressing = Some(dressing);
    Ok(out)
}

fn propagation(cfg: &ExperimentConfig) -> Result<ScenarioResult, CliError> {
    let dy = cfg.dynamics()?;
    let settings = cfg.numerics.settings();
    let t = last_time(cfg);
    let k = dy.states();
    let init = cfg.correlated_state(dy.space(), cfg.run.truncation)?;
    let (dressing, adj) = choose_dressing(cfg, &dy, &init, t)?;
    let mut rng = cfg.rng(0x6f6273);
    let b1 = TensorFunction::from_fn(k, 1, Kind::Observable, |_| rng.random_range(-1.0..1.0));
    let b2 = TensorFunction::from_fn(k, 2, Kind::Observable, |_| rng.random_range(-1.0..1.0));
    let chaotic = CorrelatedInitialState::chaotic(init.f1().clone(), cfg.run.truncation, dy.space())?;
    let free = Dynamics::new(dy.space().clone(), dy.kernels().without_two_body())?;
    let tol = cfg.tolerances.kinetic;
    let cases = [
        ("correlated, k = 1", &dy, &b1, &init, tol, false),
        ("chaotic, k = 2", &dy, &b2, &chaotic, tol, false),
        ("correlated interaction-free, k = 2", &free, &b2, &init, cfg.tolerances.adjudication, false),
        ("correlated, k = 2", &dy, &b2, &init, tol, true),
    ];
    let mut out = ScenarioResult::new(Table::new(&["case", "k", "t", "lhs", "rhs", "residual"]));
    out.checks.push(adjudication_check(&adj));
    for (label, d, b, st, tol, info) in cases {
        let pc = correlations_propagation_check(d, b, st, t, dressing, &settings)?;
        out.table.push(vec![label.to_string(), pc.k.to_string(), num(t), num(pc.lhs), num(pc.rhs), num(pc.residual)]);
        let c = CheckEntry::at_most(format!("mean value functional, {label}"), ANCHOR_PROPAGATION, pc.residual, tol);
        out.checks.push(if info { c.informational() } else { c });
    }
    adjudication_summary(&mut out, &adj);
    out.dressing = Some(dressing);
    Ok(out)
}
