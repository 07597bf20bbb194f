//! `pif-bench`: runs the forecasting studies from JSON plans and renders
//! their run directories as plain-text tables.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use pif_core::experiments::ExperimentError;
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "pif-bench", version, about = "Process-informed forecasting benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic temperature series from a recipe.
    Synth(RunArgs),
    /// Train one neural model and save its checkpoint.
    Train(RunArgs),
    /// Run the model benchmark across families, losses, tiers and seeds.
    Benchmark(RunArgs),
    /// Run the benchmark followed by the noise-robustness sweep.
    Robustness(RunArgs),
    /// Transfer a pre-trained model to a second recipe.
    Transfer(RunArgs),
    /// Render the tables of a finished run directory.
    Report {
        run_dir: PathBuf,
        /// Suppress the table on standard output.
        #[arg(long)]
        quiet: bool,
    },
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// JSON plan for the subcommand.
    #[arg(long)]
    pub config: PathBuf,
    /// Run directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Replaces the seed list of the plan with this single seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: one per core).
    #[arg(long, env = "PIF_BENCH_JOBS")]
    pub jobs: Option<usize>,
    /// Suppress progress messages.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Synth(args) => commands::synth(&args),
        Command::Train(args) => commands::train(&args),
        Command::Benchmark(args) => commands::benchmark(&args),
        Command::Robustness(args) => commands::robustness(&args),
        Command::Transfer(args) => commands::transfer(&args),
        Command::Report { run_dir, quiet } => report::run(&run_dir, quiet),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pif-bench: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
