use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use bbgky_cli::config::{ExperimentConfig, Scenario, DEFAULT_CONFIG, DEFAULT_CONFIG_ENV};
use bbgky_cli::{execute_run, execute_sweep, execute_verify, CliError, RunReport};
use clap::{Parser, Subcommand};

/// Hierarchy, mean-field and kinetic experiments for interacting jump entities.
#[derive(Debug, Parser)]
#[command(name = "bbgky", version)]
struct Cli {
    /// TOML configuration; the bundled default when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`, default `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel library calls.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Execute one scenario and write its data and report.
    Run {
        /// Scenario to run instead of the configured one.
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Run the full property suite; exit 0 iff every check passes.
    Verify,
    /// Run the scenario over the configured parameter grid.
    Sweep,
    /// Print the bundled default configuration.
    DefaultConfig,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = cli.config.clone().or_else(|| std::env::var_os(DEFAULT_CONFIG_ENV).map(PathBuf::from));
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(&p).map_err(|e| CliError::Config {
                key: "--config".into(),
                message: format!("cannot read {}: {e}", p.display()),
            })?;
            ExperimentConfig::from_toml(&text)?
        }
        None => ExperimentConfig::bundled_default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.validate().map_err(|e| match e {
            CliError::Config { message, .. } => CliError::Config {
                key: "--seed".into(),
                message,
            },
            other => other,
        })?;
    }
    Ok(cfg)
}

fn print_report(report: &RunReport) {
    for c in &report.checks {
        println!("{}", c.line());
    }
    if let Some(d) = &report.dressing {
        println!("dressing: {d}");
    }
    for o in &report.outputs {
        println!("wrote {o}");
    }
    println!(
        "{}: {} checks, {} failed, {:.2} s",
        report.command,
        report.checks.len(),
        report.failed_checks,
        report.wall_clock_seconds
    );
}

fn real_main() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    if let Command::DefaultConfig = cli.command {
        print!("{DEFAULT_CONFIG}");
        return Ok(ExitCode::SUCCESS);
    }
    let mut cfg = load_config(&cli)?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let report = match &cli.command {
        Command::Run { scenario } => {
            if let Some(name) = scenario {
                cfg.scenario = Scenario::parse(name).ok_or_else(|| CliError::Config {
                    key: "--scenario".into(),
                    message: format!("unknown scenario `{name}`"),
                })?;
            }
            execute_run(&cfg, &out)?
        }
        Command::Verify => execute_verify(&cfg, &out)?,
        Command::Sweep => execute_sweep(&cfg, &out)?,
        Command::DefaultConfig => unreachable!(),
    };
    print_report(&report);
    if report.passed {
        Ok(ExitCode::SUCCESS)
    } else {
        let e = CliError::ChecksFailed {
            failed: report.failed_checks,
        };
        eprintln!("error: {e}");
        Ok(ExitCode::from(e.exit_code() as u8))
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<CliError>().map_or(1, CliError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
