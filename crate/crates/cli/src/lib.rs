//! `asl` command-line driver.

pub mod commands;
pub mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "asl", version, about = "Adaptive social learning experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a scenario and print its KL table and Perron vector.
    Validate(CommonArgs),
    /// Steady-state log-belief ratios over independent runs.
    Simulate(CommonArgs),
    /// Steady-state ratios across a step-size grid.
    Sweep(CommonArgs),
    /// Gaussian-approximation diagnostics across step sizes.
    Normality(CommonArgs),
    /// Paired ASL and classic runs under a changing true hypothesis.
    Drift(CommonArgs),
    /// Weighted random-series checks.
    Lemma(CommonArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate(_) => "validate",
            Command::Simulate(_) => "simulate",
            Command::Sweep(_) => "sweep",
            Command::Normality(_) => "normality",
            Command::Drift(_) => "drift",
            Command::Lemma(_) => "lemma",
        }
    }

    pub fn args(&self) -> &CommonArgs {
        match self {
            Command::Validate(a)
            | Command::Simulate(a)
            | Command::Sweep(a)
            | Command::Normality(a)
            | Command::Drift(a)
            | Command::Lemma(a) => a,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory; not used by `validate`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the scenario's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for Monte Carlo runs.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

pub fn run(cli: Cli) -> ExitCode {
    match commands::dispatch(&cli.command) {
        Ok(message) => {
            print!("{message}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("asl {}: {e}", cli.command.name());
            ExitCode::from(e.exit_code())
        }
    }
}
