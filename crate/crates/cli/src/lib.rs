//! Configuration, scenario execution and reproducible outputs for the
//! `bbgky` command-line tool.

pub mod config;
pub mod error;
pub mod output;
pub mod report;
pub mod scenarios;
pub mod sweep;
pub mod verify;

use std::path::{Path, PathBuf};
use std::time::Instant;

pub use config::{ExperimentConfig, Scenario};
pub use error::CliError;
pub use report::{CheckEntry, RunReport};

use crate::output::{write_csv, write_json};

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Runs the configured scenario and writes `<scenario>.csv` and
/// `<scenario>_report.json` into `out`.
pub fn execute_run(cfg: &ExperimentConfig, out: &Path) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let res = scenarios::run_scenario(cfg)?;
    let mut report = RunReport::new("run", cfg);
    let data: PathBuf = out.join(format!("{}.csv", cfg.scenario.name()));
    write_csv(&data, &res.table)?;
    report.outputs.push(file_name(&data));
    report.dressing = res.dressing.map(|d| d.name().to_string());
    report.summary = res.summary;
    report.checks = res.checks;
    report.finish(start.elapsed());
    write_json(&out.join(format!("{}_report.json", cfg.scenario.name())), &report)?;
    Ok(report)
}

/// Runs the property suite and writes `verify_report.json` into `out`.
pub fn execute_verify(cfg: &ExperimentConfig, out: &Path) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let (checks, dressing) = verify::verify_suite(cfg)?;
    let mut report = RunReport::new("verify", cfg);
    report.scenario = "property-suite".into();
    report.dressing = dressing;
    report.checks = checks;
    report.finish(start.elapsed());
    write_json(&out.join("verify_report.json"), &report)?;
    Ok(report)
}

/// Runs the scenario on every grid point and writes `sweep.csv` and
/// `sweep_report.json` into `out`.
pub fn execute_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let res = sweep::run_sweep(cfg)?;
    let mut report = RunReport::new("sweep", cfg);
    let data = out.join("sweep.csv");
    write_csv(&data, &res.table)?;
    report.outputs.push(file_name(&data));
    report.summary.insert("grid_points".into(), res.table.rows.len() as f64);
    report.checks = res.checks;
    report.finish(start.elapsed());
    write_json(&out.join("sweep_report.json"), &report)?;
    Ok(report)
}
