//! `impulse`: runs the solvers on a TOML experiment description.
//!
//! Exit codes: 0 success, 2 invalid configuration or model, 3 solver
//! failure, 4 failed verification.

mod commands;
mod config;
mod model;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{RunContext, RunError};
use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "impulse", version, about = "Risk-sensitive impulse control on dyadic grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `simulation.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `output.directory`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress the one-line summary on stdout.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Optimal cost rate and bias at the finest level.
    Solve,
    /// Cost rates across dyadic levels.
    Ladder,
    /// Finite-horizon values with a bounded number of impulses.
    FiniteHorizon,
    /// Monte Carlo estimates for the optimal and the uncontrolled policy.
    Simulate,
    /// Optimal stopping with the `[stopping]` block.
    Stopping,
    /// Invariant and oracle checks; exits with 4 on any failure.
    Verify,
}

fn run(cli: &Cli) -> Result<String, RunError> {
    let path = cli.config.as_ref().ok_or(config::ConfigError::Field {
        field: "--config",
        message: "a configuration file is required".into(),
    })?;
    let cfg = ExperimentConfig::load(&path.to_string_lossy())?;
    let ctx = RunContext::new(cfg, cli.seed, cli.out.clone());
    match cli.command {
        Command::Solve => commands::solve(&ctx),
        Command::Ladder => commands::ladder(&ctx),
        Command::FiniteHorizon => commands::finite_horizon(&ctx),
        Command::Simulate => commands::simulate(&ctx),
        Command::Stopping => commands::stopping(&ctx),
        Command::Verify => commands::verify(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            if !cli.quiet {
                println!("{summary}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
