//! `gmsnet` command-line driver.
//!
//! Exit status: 0 on success, 2 for invalid input, 3 for a numerical failure
//! and 4 when an iterative solve does not converge.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gmsnet::coeff::CoeffError;
use gmsnet::datagen::DatasetError;
use gmsnet::precond::PrecondError;
use gmsnet::surrogate::SurrogateError;

use crate::commands::CliError;
use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "gmsnet", version, about = "Multiscale two-grid Darcy solver and data pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample permeability fields and write them to --out.
    GenField(RunConfig),
    /// Build a labelled tile dataset from sampled fields.
    MakeDataset(RunConfig),
    /// Solve one pressure system with the two-grid preconditioned CG.
    Solve(RunConfig),
    /// Sweep seeds and coarse-space sizes, appending CSV rows to --out.
    Bench(RunConfig),
    /// Run the built-in invariant suites.
    Verify,
    /// Write a randomly initialized network in the MSUW format.
    InitWeights(RunConfig),
}

const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_NONCONVERGENCE: u8 = 4;

fn exit_code(err: &CliError) -> u8 {
    use gmsnet::Error as E;
    match err {
        CliError::Config(_) => EXIT_VALIDATION,
        CliError::Verification { .. } => EXIT_NUMERICAL,
        CliError::BenchNonConvergence { .. } => EXIT_NONCONVERGENCE,
        CliError::Core(core) => match core {
            E::Precond(PrecondError::NonConvergence(_)) => EXIT_NONCONVERGENCE,
            E::Precond(
                PrecondError::Dimension(_)
                | PrecondError::OperatorMesh { .. }
                | PrecondError::IncompatibleRhs { .. }
                | PrecondError::InvalidTolerance(_)
                | PrecondError::TooLarge { .. },
            ) => EXIT_VALIDATION,
            E::Precond(_) | E::Spectral(_) | E::Subspace(_) => EXIT_NUMERICAL,
            E::Coeff(CoeffError::NegativeEigenvalue { .. } | CoeffError::EigenNotConverged(_)) => EXIT_NUMERICAL,
            E::Dataset(DatasetError::Spectral(_) | DatasetError::Invariant { .. } | DatasetError::NegativeEigenvalue { .. }) => {
                EXIT_NUMERICAL
            }
            E::Surrogate(
                SurrogateError::RankDeficient { .. }
                | SurrogateError::Spectral(_)
                | SurrogateError::NonFinite { .. }
                | SurrogateError::NonFiniteAt { .. },
            ) => EXIT_NUMERICAL,
            _ => EXIT_VALIDATION,
        },
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.command {
        Command::Verify => None,
        Command::GenField(f) | Command::MakeDataset(f) | Command::Solve(f) | Command::Bench(f) | Command::InitWeights(f) => {
            let cfg = RunConfig::resolve(f)?;
            cfg.validate()?;
            if let Some(n) = cfg.threads {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    log::warn!("could not size the thread pool: {e}");
                }
            }
            log::debug!("resolved configuration: {}", serde_json::to_string(&cfg).unwrap_or_default());
            Some(cfg)
        }
    };
    match (&cli.command, cfg.as_ref()) {
        (Command::GenField(_), Some(c)) => commands::gen_field(c),
        (Command::MakeDataset(_), Some(c)) => commands::make_dataset(c),
        (Command::Solve(_), Some(c)) => commands::solve(c),
        (Command::Bench(_), Some(c)) => commands::bench(c),
        (Command::InitWeights(_), Some(c)) => commands::init_weights(c),
        _ => commands::verify(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MSG_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
