use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

mod commands;

use commands::{dataset, eval, evolve, fvce, Failure};

/// Explainable face-forgery reasoning harness.
///
/// Exit codes: 0 success, 1 domain failure, 2 I/O or configuration failure.
/// Environment: FORGE_EVOLVE_TOKEN (bearer token for HTTP endpoints),
/// FORGE_EVOLVE_LOG (off|info|debug).
#[derive(Debug, Parser)]
#[command(name = "forge-evolve", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract restoration differences and frequency maps for a directory of images.
    Fvce(fvce::FvceArgs),
    /// Run the self-evolution loop over a dataset.
    Evolve(evolve::EvolveArgs),
    /// Compute ACC / AUC / EER (and CIDEr when texts are present) from predictions.
    Eval(eval::EvalArgs),
    /// Dataset utilities.
    Dataset {
        #[command(subcommand)]
        command: dataset::DatasetCommand,
    },
}

fn init_logging() {
    let level = std::env::var("FORGE_EVOLVE_LOG").unwrap_or_else(|_| "off".into());
    let filter = EnvFilter::try_new(&level).unwrap_or_else(|_| EnvFilter::new("off"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fvce(args) => fvce::run(args),
        Command::Evolve(args) => evolve::run(args),
        Command::Eval(args) => eval::run(args),
        Command::Dataset { command } => dataset::run(command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, message }) => {
            if !message.is_empty() {
                eprintln!("error: {message}");
            }
            ExitCode::from(code)
        }
    }
}
