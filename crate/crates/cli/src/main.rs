//! `hsmrf`: effective population size trajectories from dated genealogies.

mod commands;
mod config;
mod error;
mod io;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "hsmrf", version = commands::VERSION, about)]
struct Cli {
    /// JSON run configuration or a previous run manifest; flags take
    /// precedence over its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, env = "HSMRF_OUT_DIR", default_value = "hsmrf-out")]
    out: PathBuf,

    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate replicate genealogies from a scenario, with tip dates and the
    /// true log trajectory on the grid.
    Simulate(RunConfig),
    /// Print the calibrated global-scale hyperparameter for a tree.
    Calibrate(RunConfig),
    /// Write the classic skyline estimates of a tree.
    Skyline(RunConfig),
    /// Sample the posterior of a field model on a fixed tree.
    Fit(RunConfig),
    /// Compute metrics for posterior CSV files.
    Evaluate(RunConfig),
    /// Rank models by steppingstone marginal likelihood.
    Compare(RunConfig),
    /// Simulate, calibrate, fit and evaluate over replicates of a scenario.
    Study(RunConfig),
}

fn run(cli: Cli) -> CliResult<serde_json::Value> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::usage("--jobs must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::runtime(format!("cannot start worker pool: {e}")))?;
    }
    let base = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let resolve = |flags: RunConfig| -> CliResult<RunConfig> {
        let mut cfg = flags.over(base.clone());
        cfg.absolutize()?;
        Ok(cfg)
    };
    let out: &Path = &cli.out;
    match cli.command {
        Command::Simulate(f) => commands::simulate(resolve(f)?, out),
        Command::Calibrate(f) => commands::calibrate(resolve(f)?),
        Command::Skyline(f) => commands::skyline(resolve(f)?, out),
        Command::Fit(f) => commands::fit(resolve(f)?, out),
        Command::Evaluate(f) => commands::evaluate(resolve(f)?, out),
        Command::Compare(f) => commands::compare(resolve(f)?, out),
        Command::Study(f) => commands::study(resolve(f)?, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report).expect("serializable report"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.code)
        }
    }
}
