use std::path::Path;
use std::process::{Command, Output};

use bbgky::meanfield::loglog_slope;
use bbgky_cli::config::{ExperimentConfig, SweepConfig, DEFAULT_CONFIG};
use serde_json::Value;

fn bbgky(dir: &Path, config: Option<&ExperimentConfig>, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bbgky"));
    cmd.env_remove("BBGKY_DEFAULT_CONFIG");
    cmd.arg("--out").arg(dir.join("out"));
    if let Some(cfg) = config {
        let path = dir.join("config.toml");
        std::fs::write(&path, cfg.to_toml()).unwrap();
        cmd.arg("--config").arg(path);
    }
    cmd.args(args).output().unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn default() -> ExperimentConfig {
    ExperimentConfig::from_toml(DEFAULT_CONFIG).unwrap()
}

#[test]
fn vlasov_writes_trajectory_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = bbgky(dir.path(), None, &["run", "--scenario", "vlasov"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = default();
    let (header, rows) = read_csv(&dir.path().join("out/vlasov.csv"));
    assert_eq!(header, ["t", "flat_index", "f1"]);
    assert_eq!(rows.len(), cfg.run.times.len() * cfg.space.grid_len);
    let report = read_json(&dir.path().join("out/vlasov_report.json"));
    assert_eq!(report["dressing"], "inverse-dressed");
    assert_eq!(report["scenario"], "vlasov");
    assert!(report["checks"].as_array().unwrap().iter().all(|c| c["anchor"].as_str().is_some_and(|a| !a.is_empty())));
}

#[test]
fn meanfield_scan_slope_matches_its_data() {
    let dir = tempfile::tempdir().unwrap();
    let o = bbgky(dir.path(), None, &["run", "--scenario", "meanfield-scan"]);
    assert!(o.status.success());
    let (_, rows) = read_csv(&dir.path().join("out/meanfield-scan.csv"));
    assert_eq!(rows.len(), 4);
    let eps: Vec<f64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    let err: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    let report = read_json(&dir.path().join("out/meanfield-scan_report.json"));
    let slope = report["summary"]["expansion_error_slope"].as_f64().unwrap();
    assert!((slope - loglog_slope(&eps, &err)).abs() < 1e-12);
}

#[test]
fn same_seed_gives_identical_csv() {
    for scenario in ["jump-evolve", "propagation-check"] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for d in [&a, &b] {
            assert!(bbgky(d.path(), None, &["--seed", "11", "--threads", "2", "run", "--scenario", scenario]).status.success());
        }
        let name = format!("out/{scenario}.csv");
        assert_eq!(
            std::fs::read(a.path().join(&name)).unwrap(),
            std::fs::read(b.path().join(&name)).unwrap()
        );
    }
}

#[test]
fn seed_changes_random_content() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    bbgky(a.path(), None, &["--seed", "1", "run", "--scenario", "dual-bbgky-evolve"]);
    bbgky(b.path(), None, &["--seed", "2", "run", "--scenario", "dual-bbgky-evolve"]);
    let name = "out/dual-bbgky-evolve.csv";
    assert_ne!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
}

#[test]
fn verify_passes_on_default_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = bbgky(dir.path(), None, &["verify"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let report = read_json(&dir.path().join("out/verify_report.json"));
    assert_eq!(report["passed"], true);
    assert!(report["checks"].as_array().unwrap().len() > 20);
    assert_eq!(report["dressing"], "inverse-dressed");
}

#[test]
fn verify_reports_broken_kernels() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = default();
    cfg.kernels.source = bbgky_cli::config::KernelSource::Inline;
    cfg.kernels.inline = Some(bbgky_cli::config::InlineKernels {
        a1: vec![1.0, 1.0],
        jump1: vec![vec![1.0, 1.0], vec![1.3, 1.0]],
        a2: vec![vec![0.1, 0.1], vec![0.1, 0.1]],
        jump2: vec![1.0; 8],
    });
    let o = bbgky(dir.path(), Some(&cfg), &["verify"]);
    assert_eq!(o.status.code(), Some(3));
    let report = read_json(&dir.path().join("out/verify_report.json"));
    assert_eq!(report["checks"][0]["passed"], false);
    // running a scenario on it is a configuration error
    let o = bbgky(dir.path(), Some(&cfg), &["run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("kernels"));
}

#[test]
fn invalid_configs_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, format!("{DEFAULT_CONFIG}\nmystery_key = 1\n")).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_bbgky")).arg("--config").arg(&path).arg("run").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("mystery_key"));

    let mut cfg = default();
    cfg.run.times = vec![1.0, 0.5];
    let o = bbgky(dir.path(), Some(&cfg), &["run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("run.times"));

    let o = bbgky(dir.path(), None, &["run", "--scenario", "warp-drive"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn oversized_space_exits_with_code_four() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = default();
    cfg.space.grid_len = 64;
    let o = bbgky(dir.path(), Some(&cfg), &["run", "--scenario", "bbgky-evolve"]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn failed_checks_exit_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = default();
    cfg.tolerances.mass = 1e-30;
    let o = bbgky(dir.path(), Some(&cfg), &["run", "--scenario", "bbgky-evolve"]);
    assert_eq!(o.status.code(), Some(3));
    // the data and report are still written
    assert!(dir.path().join("out/bbgky-evolve.csv").exists());
    assert_eq!(read_json(&dir.path().join("out/bbgky-evolve_report.json"))["passed"], false);
}

#[test]
fn single_point_sweep_matches_run_summary() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = default();
    cfg.scenario = bbgky_cli::Scenario::BbgkyEvolve;
    cfg.run.times = vec![0.5];
    cfg.sweep = Some(SweepConfig::default());
    assert!(bbgky(dir.path(), Some(&cfg), &["sweep"]).status.success());
    assert!(bbgky(dir.path(), Some(&cfg), &["run"]).status.success());
    let (header, rows) = read_csv(&dir.path().join("out/sweep.csv"));
    assert_eq!(rows.len(), 1);
    let report = read_json(&dir.path().join("out/bbgky-evolve_report.json"));
    for (key, v) in report["summary"].as_object().unwrap() {
        let col = header.iter().position(|h| h == key).unwrap();
        let (a, b) = (rows[0][col].parse::<f64>().unwrap(), v.as_f64().unwrap());
        assert!((a - b).abs() <= 1e-14 * a.abs().max(1e-300), "{key}: {a} vs {b}");
    }
}

#[test]
fn grid_sweep_is_ordered_and_fits_epsilon_slopes() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = default();
    cfg.scenario = bbgky_cli::Scenario::MeanfieldScan;
    cfg.sweep = Some(SweepConfig {
        epsilons: Some(vec![0.1, 0.025, 0.2, 0.05]),
        times: Some(vec![0.5, 0.25]),
        truncations: None,
    });
    assert!(bbgky(dir.path(), Some(&cfg), &["sweep"]).status.success());
    let (header, rows) = read_csv(&dir.path().join("out/sweep.csv"));
    assert_eq!(rows.len(), 8);
    let key = |r: &Vec<String>| (r[0].parse::<f64>().unwrap(), r[1].parse::<f64>().unwrap());
    assert!(rows.windows(2).all(|w| key(&w[0]) < key(&w[1])));

    let err = header.iter().position(|h| h == "expansion_error").unwrap();
    let slope = header.iter().position(|h| h == "expansion_error_slope").unwrap();
    let at: Vec<&Vec<String>> = rows.iter().filter(|r| r[1] == "0.5").collect();
    let eps: Vec<f64> = at.iter().map(|r| r[0].parse().unwrap()).collect();
    let e: Vec<f64> = at.iter().map(|r| r[err].parse().unwrap()).collect();
    assert_eq!(at[0][slope].parse::<f64>().unwrap(), loglog_slope(&eps, &e));

    // the same scan through `run` gives the same fit
    let mut scan = cfg.clone();
    scan.sweep = None;
    scan.run.times = vec![0.5];
    scan.run.epsilons = vec![0.025, 0.05, 0.1, 0.2];
    assert!(bbgky(dir.path(), Some(&scan), &["run"]).status.success());
    let report = read_json(&dir.path().join("out/meanfield-scan_report.json"));
    let fitted = report["summary"]["expansion_error_slope"].as_f64().unwrap();
    assert!((fitted - at[0][slope].parse::<f64>().unwrap()).abs() < 1e-12);
}

#[test]
fn two_by_two_grid_gives_four_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = default();
    cfg.scenario = bbgky_cli::Scenario::DualBbgkyEvolve;
    cfg.sweep = Some(SweepConfig {
        epsilons: Some(vec![0.5, 0.25]),
        times: None,
        truncations: Some(vec![3, 2]),
    });
    assert!(bbgky(dir.path(), Some(&cfg), &["sweep"]).status.success());
    let (_, rows) = read_csv(&dir.path().join("out/sweep.csv"));
    let keys: Vec<(String, String)> = rows.iter().map(|r| (r[0].clone(), r[2].clone())).collect();
    assert_eq!(
        keys,
        [("0.25", "2"), ("0.25", "3"), ("0.5", "2"), ("0.5", "3")].map(|(a, b)| (a.to_string(), b.to_string()))
    );
}

#[test]
fn default_config_command_prints_bundled_file() {
    let o = Command::new(env!("CARGO_BIN_EXE_bbgky")).arg("default-config").output().unwrap();
    assert!(o.status.success());
    assert_eq!(String::from_utf8(o.stdout).unwrap(), DEFAULT_CONFIG);
}
