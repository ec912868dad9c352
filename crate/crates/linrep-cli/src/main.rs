//! `linrep`: train, evaluate, sweep, and verify multi-task linear
//! representation learners from a TOML experiment config.
//!
//! Exit codes: 0 success, 1 invalid config or runtime failure, 2 a
//! verification check failed.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod config;
mod evaluate;
mod manifest;
mod sweep;
mod train;
mod verify;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// The config (or CLI override) is self-inconsistent; nothing ran.
    #[error("{0}")]
    Validation(String),
    /// A run started and failed: IO, missing artifacts, numerical trouble.
    #[error("{0}")]
    Runtime(String),
    /// `verify` ran to completion and at least one check failed.
    #[error("{0}")]
    VerifyFailed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) | CliError::Runtime(_) => 1,
            CliError::VerifyFailed(_) => 2,
        }
    }
}

#[derive(Parser)]
#[command(name = "linrep", version, about = "Multi-task linear representation learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; created if absent.
    #[arg(long)]
    out: PathBuf,
    /// Override the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's number of runs.
    #[arg(long)]
    runs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured regime; write per-run artifacts and a trace aggregate.
    Train(CommonArgs),
    /// Adapt trained representations on fresh tasks and tabulate excess risks.
    Evaluate(CommonArgs),
    /// Re-train across a parameter grid and aggregate one row per (value, step).
    Sweep(CommonArgs),
    /// Run the theory self-checks for this config.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Internal: scale the closed-form fixed point to prove the check can fail.
    #[arg(long, hide = true)]
    tamper_lambda_scale: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(args) => {
            let config = load_config(&args)?;
            let outcome = train::cmd_train(&config, &args.out)?;
            println!(
                "trained {} x{} in {:.1}s -> {}",
                config.run.regime,
                outcome.manifest.per_run_seeds.len(),
                outcome.manifest.wall_time_s,
                outcome.regime_dir.display()
            );
            Ok(())
        }
        Command::Evaluate(args) => {
            let config = load_config(&args)?;
            let outcome = evaluate::cmd_evaluate(&config, &args.out)?;
            println!(
                "evaluated {} method rows -> {} (and {})",
                outcome.table.rows.len(),
                outcome.json_path.display(),
                outcome.csv_path.display()
            );
            Ok(())
        }
        Command::Sweep(args) => {
            let config = load_config(&args)?;
            let outcome = sweep::cmd_sweep(&config, &args.out)?;
            println!("swept {} aggregate rows -> {}", outcome.rows, outcome.csv_path.display());
            Ok(())
        }
        Command::Verify(args) => {
            let config = load_config(&args.common)?;
            let report = verify::cmd_verify(&config, &args.common.out, args.tamper_lambda_scale)?;
            if report.all_pass {
                Ok(())
            } else {
                let failed: Vec<&str> = report
                    .rows
                    .iter()
                    .filter(|r| !r.pass)
                    .map(|r| r.name.as_str())
                    .collect();
                Err(CliError::VerifyFailed(format!(
                    "{} check(s) failed: {}",
                    failed.len(),
                    failed.join("; ")
                )))
            }
        }
    }
}

fn load_config(args: &CommonArgs) -> Result<config::ExperimentConfig, CliError> {
    let mut config = config::ExperimentConfig::load(&args.config)?;
    config.apply_overrides(args.seed, args.runs);
    config.validated()?;
    Ok(config)
}
