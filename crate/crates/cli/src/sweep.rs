//! Parameter sweeps over `(epsilon, t, truncation)` grids.

use std::collections::{BTreeMap, BTreeSet};

use bbgky::meanfield::loglog_slope;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::{num, Table};
use crate::report::CheckEntry;
use crate::scenarios::run_scenario;

/// Summaries whose dependence on epsilon is fitted per `(t, truncation)` group.
const FITTED: [&str; 2] = ["expansion_error", "one_body_error"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub epsilon: f64,
    pub t: f64,
    pub truncation: usize,
}

/// Grid points in lexicographic order of `(epsilon, t, truncation)`.
pub fn grid(cfg: &ExperimentConfig) -> Vec<GridPoint> {
    let sw = cfg.sweep.clone().unwrap_or_default();
    let eps = sw.epsilons.unwrap_or_else(|| vec![cfg.run.epsilon]);
    let times = sw.times.unwrap_or_else(|| vec![*cfg.run.times.last().expect("validated nonempty")]);
    let truncs = sw.truncations.unwrap_or_else(|| vec![cfg.run.truncation]);
    let mut pts = Vec::new();
    for &epsilon in &eps {
        for &t in &times {
            for &truncation in &truncs {
                pts.push(GridPoint { epsilon, t, truncation });
            }
        }
    }
    pts.sort_by(|a, b| {
        a.epsilon
            .total_cmp(&b.epsilon)
            .then(a.t.total_cmp(&b.t))
            .then(a.truncation.cmp(&b.truncation))
    });
    pts.dedup();
    pts
}

/// Configuration of a single grid point.
pub fn point_config(cfg: &ExperimentConfig, p: GridPoint) -> ExperimentConfig {
    let mut sub = cfg.clone();
    sub.sweep = None;
    sub.run.epsilon = p.epsilon;
    sub.run.epsilons = vec![p.epsilon];
    sub.run.times = vec![p.t];
    sub.run.truncation = p.truncation;
    if cfg.sweep.as_ref().is_some_and(|s| s.truncations.is_some()) {
        sub.run.s_max = p.truncation;
    }
    sub
}

pub struct SweepResult {
    pub table: Table,
    pub checks: Vec<CheckEntry>,
}

pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult, CliError> {
    let points = grid(cfg);
    let mut summaries = Vec::with_capacity(points.len());
    let mut checks = Vec::new();
    for &p in &points {
        let res = run_scenario(&point_config(cfg, p))?;
        let passed = res.checks.iter().all(|c| !c.is_failure());
        for mut c in res.checks {
            c.name = format!("epsilon = {}, t = {}, truncation = {}: {}", p.epsilon, p.t, p.truncation, c.name);
            checks.push(c);
        }
        summaries.push((passed, res.summary));
    }

    let keys: BTreeSet<String> = summaries.iter().flat_map(|(_, s)| s.keys().cloned()).collect();
    let fitted: Vec<&str> = FITTED.into_iter().filter(|k| keys.contains(*k)).collect();
    let mut slopes: BTreeMap<(u64, usize, &str), f64> = BTreeMap::new();
    for key in &fitted {
        let mut groups: BTreeMap<(u64, usize), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for (p, (_, s)) in points.iter().zip(&summaries) {
            let g = groups.entry((p.t.to_bits(), p.truncation)).or_default();
            g.0.push(p.epsilon);
            g.1.push(s[*key]);
        }
        for ((t, n), (x, y)) in groups {
            let slope = if x.len() >= 2 { loglog_slope(&x, &y) } else { f64::NAN };
            slopes.insert((t, n, key), slope);
        }
    }

    let mut header = vec!["epsilon".to_string(), "t".into(), "truncation".into(), "passed".into()];
    header.extend(keys.iter().cloned());
    header.extend(fitted.iter().map(|k| format!("{k}_slope")));
    let mut table = Table {
        header,
        rows: Vec::new(),
    };
    for (p, (passed, s)) in points.iter().zip(&summaries) {
        let mut row = vec![num(p.epsilon), num(p.t), p.truncation.to_string(), passed.to_string()];
        row.extend(keys.iter().map(|k| s.get(k).map(|v| num(*v)).unwrap_or_default()));
        row.extend(fitted.iter().map(|k| num(slopes[&(p.t.to_bits(), p.truncation, *k)])));
        table.push(row);
    }
    Ok(SweepResult { table, checks })
}
