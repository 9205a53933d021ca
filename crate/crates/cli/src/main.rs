//! `simplexnet` — train, evaluate, and audit the simplex-target
//! classification stack from the command line. Every command is
//! deterministic given `--seed`; CSV outputs are written atomically.

mod commands;
mod config;
mod datasets;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "simplexnet",
    version,
    about = "Scale-invariant simplex-target classification: training, sweeps, and gradient audits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one (stage, h, m) configuration and write a metrics CSV.
    Train(config::RunArgs),
    /// Report error rates of saved parameters on a dataset.
    Evaluate(config::EvalArgs),
    /// Train a grid of (stage, h, m) series and write per-epoch test errors.
    Sweep(config::RunArgs),
    /// Finite-difference audit of every analytic gradient plus the
    /// gradient-norm bound.
    Gradcheck(config::GradcheckArgs),
    /// Print the unit target vectors of a rescaled stage, one per line.
    DumpTargets(config::DumpArgs),
}

/// Usage problems exit with code 2, data and runtime problems with code 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl From<simplexnet_core::Error> for CliError {
    fn from(e: simplexnet_core::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Train(args) => commands::train(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Sweep(args) => commands::sweep(args),
        Command::Gradcheck(args) => commands::gradcheck(args),
        Command::DumpTargets(args) => commands::dump_targets(args),
    };
    let code = match outcome {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    };
    std::process::exit(code);
}
