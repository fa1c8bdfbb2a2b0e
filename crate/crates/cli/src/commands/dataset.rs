use std::path::{Path, PathBuf};

use clap::Subcommand;
use forge_evolve::dataset::{self, DatasetError};
use forge_evolve::RegionVocab;

use super::{resolve, CmdResult, Failure};

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Check a CoT-Face JSONL file; prints a JSON report, exits 0 only when clean.
    Validate {
        /// Dataset path.
        path: PathBuf,
    },
}

pub fn run(command: DatasetCommand) -> CmdResult {
    match command {
        DatasetCommand::Validate { path } => validate(&path),
    }
}

fn validate(path: &Path) -> CmdResult {
    let path = resolve(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    let records = dataset::load(&path).map_err(|e| match e {
        DatasetError::Io(e) => Failure::io(format!("{}: {e}", path.display())),
        other => Failure::domain(other),
    })?;
    let report = dataset::validate(&records, path.parent(), &RegionVocab::default());
    println!(
        "{}",
        serde_json::to_string_pretty(&report).map_err(Failure::io)?
    );
    if report.is_clean() {
        Ok(())
    } else {
        Err(Failure::domain(format!(
            "{} findings",
            report.findings.len()
        )))
    }
}
