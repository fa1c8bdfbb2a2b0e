use std::io::{BufRead, BufReader};
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use forge_evolve::metrics::{self, CiderVariant, PredictionRecord};

use super::{CmdResult, Failure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CiderFlavor {
    /// TF-IDF n-gram cosine against the mean reference vector.
    Original,
    /// Clipped counts with a Gaussian length penalty.
    D,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predictions JSONL: id, verdict, label, optional score and texts.
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long, value_enum, default_value_t = CiderFlavor::Original)]
    pub cider_variant: CiderFlavor,
}

fn read_predictions(path: &PathBuf) -> Result<Vec<PredictionRecord>, Failure> {
    let file =
        std::fs::File::open(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| Failure::domain(format!("{}:{}: {e}", path.display(), i + 1)))?;
        records.push(record);
    }
    Ok(records)
}

pub fn run(args: EvalArgs) -> CmdResult {
    let records = read_predictions(&args.predictions)?;
    let variant = match args.cider_variant {
        CiderFlavor::Original => CiderVariant::Original,
        CiderFlavor::D => CiderVariant::D,
    };
    let report =
        metrics::evaluate(&records, variant).map_err(|e| Failure::domain(format!("{e:?}: {e}")))?;
    println!("{}", serde_json::to_string(&report).map_err(Failure::io)?);
    Ok(())
}
