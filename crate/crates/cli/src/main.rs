//! `sing`: stage-by-stage front end over on-disk artifacts.
//!
//! Exit codes: 0 success, 2 usage / validation / IO error, 3 numerical failure.

mod commands;
mod error;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliError;

/// Null-space leakage diagnostics for classifier heads.
#[derive(Parser)]
#[command(name = "sing", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a bundle's head into principal and null subspaces
    Decompose(commands::decompose::Args),
    /// Fit the ridge translator from features to joint-space embeddings
    FitTranslator(commands::fit_translator::Args),
    /// Score null-removed pairs with AS / IS
    Metrics(commands::metrics::Args),
    /// Perturb features and report the resulting scores
    Steer(commands::steer::Args),
    /// Compare null, random and principal logit drift
    Validate(commands::validate::Args),
    /// Write a synthetic bundle with a planted null-space leak
    Synth(commands::synth::Args),
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("SING_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("SING_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot configure thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Decompose(args) => commands::decompose::run(args),
        Command::FitTranslator(args) => commands::fit_translator::run(args),
        Command::Metrics(args) => commands::metrics::run(args),
        Command::Steer(args) => commands::steer::run(args),
        Command::Validate(args) => commands::validate::run(args),
        Command::Synth(args) => commands::synth::run(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
