//! Experiment harness for memory-budgeted kernel approximation.
//!
//! Subcommands drive config-defined sweeps over approximation methods,
//! feature counts, precisions, and regularization strengths, writing CSV
//! rows and per-run artifacts under the configured output directory.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod config;
mod runner;

/// Harness error split by exit code: config/IO problems exit 2, runtime
/// failures exit 1.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "{m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "lprff",
    version,
    about = "Kernel approximation experiments under training-memory budgets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Dotted-path config overrides, e.g. --override experiment.seeds=[0,1].
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train linear models over the configured grid and record metrics,
    /// logs, and memory footprints.
    Train(RunArgs),
    /// Measure kernel approximation error metrics on the heldout set.
    Metrics(RunArgs),
    /// Evaluate the fixed-design risk formulas and spectral bounds.
    Theory(RunArgs),
    /// Print the closed-form memory accounting table.
    Memory(RunArgs),
    /// Composite: train and measure per cell, with a rank-correlation summary.
    Sweep(RunArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (name, args) = match &cli.command {
        Command::Train(a) => ("train", a),
        Command::Metrics(a) => ("metrics", a),
        Command::Theory(a) => ("theory", a),
        Command::Memory(a) => ("memory", a),
        Command::Sweep(a) => ("sweep", a),
    };
    let (config, hash) = config::load(&args.config, &args.overrides)?;
    match name {
        "train" => runner::run_train(&config, &hash),
        "metrics" => runner::run_metrics(&config, &hash),
        "theory" => runner::run_theory(&config, &hash),
        "memory" => runner::run_memory(&config, &hash),
        "sweep" => runner::run_sweep(&config, &hash),
        _ => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
