use std::path::{Path, PathBuf};

use clap::Args;
use forge_evolve::clients::{self, ClientConfig, STANDARD_PROMPT};
use forge_evolve::dataset::{self, CotFaceRecord};
use forge_evolve::grpo::{
    self, EvolutionConfig, ModelClients, RoundRecord, SampleContext, DEFAULT_CANDIDATES,
    DEFAULT_EPSILON, DEFAULT_ITERATIONS, DEFAULT_KEEP,
};
use forge_evolve::reward::DEFAULT_BETA;
use forge_evolve::RegionVocab;
use rayon::prelude::*;
use serde::Serialize;

use super::{file_stem_for, resolve, thread_pool, CmdResult, Failure};

#[derive(Debug, Args)]
pub struct EvolveArgs {
    /// CoT-Face JSONL dataset.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Directory for `<id>.trajectory.jsonl` files.
    #[arg(long)]
    pub output: PathBuf,
    /// Policy endpoint: http(s) URL or mock:scripted[=pool.json].
    #[arg(long, default_value = "mock:scripted")]
    pub policy_url: String,
    /// Teacher endpoint: http(s) URL or mock:cosine-to-target[=target.txt].
    #[arg(long, default_value = "mock:cosine-to-target")]
    pub teacher_url: String,
    /// Embedder endpoint: http(s) URL or mock:hashing[=dim].
    #[arg(long, default_value = "mock:hashing")]
    pub embedder_url: String,
    /// Responses sampled per round (C).
    #[arg(long, default_value_t = DEFAULT_CANDIDATES)]
    pub candidates: usize,
    /// Responses kept after filtering (M).
    #[arg(long, default_value_t = DEFAULT_KEEP)]
    pub keep: usize,
    /// Evolution rounds per sample (T).
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    pub iterations: usize,
    /// Rank weight of the self-evolution reward.
    #[arg(long, default_value_t = DEFAULT_BETA)]
    pub beta: f64,
    /// Advantage normalization guard.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Samples processed concurrently.
    #[arg(long, default_value_t = 4)]
    pub parallelism: usize,
    /// Per-request timeout for HTTP endpoints.
    #[arg(long, default_value_t = 30_000)]
    pub timeout_ms: u64,
    /// Retries on timeouts and 5xx responses.
    #[arg(long, default_value_t = 2)]
    pub max_retries: u32,
    /// Stop a sample early once the mean dispersion coefficient exceeds this.
    #[arg(long)]
    pub convergence: Option<f64>,
    #[arg(long, default_value = STANDARD_PROMPT)]
    pub prompt: String,
    /// Directory holding `<image stem>.fvce` containers to pass along.
    #[arg(long)]
    pub extra_info_dir: Option<PathBuf>,
    /// Send image bytes inline instead of by path.
    #[arg(long)]
    pub inline_images: bool,
}

#[derive(Debug, Serialize)]
struct SampleSummary<'a> {
    id: &'a str,
    rounds: usize,
    final_reward_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn client_config(args: &EvolveArgs, endpoint: &str, token: &Option<String>) -> ClientConfig {
    ClientConfig {
        timeout_ms: args.timeout_ms,
        max_retries: args.max_retries,
        seed: args.seed,
        bearer_token: token.clone(),
        inline_images: args.inline_images,
        ..ClientConfig::new(endpoint)
    }
}

fn build_clients(args: &EvolveArgs) -> Result<ModelClients, Failure> {
    let token = std::env::var("FORGE_EVOLVE_TOKEN")
        .ok()
        .filter(|t| !t.is_empty());
    let cfg = |endpoint: &str| client_config(args, endpoint, &token);
    let policy_cfg = cfg(&args.policy_url);
    let teacher_cfg = cfg(&args.teacher_url);
    let embedder_cfg = cfg(&args.embedder_url);
    for c in [&policy_cfg, &teacher_cfg, &embedder_cfg] {
        c.validate()
            .map_err(|e| Failure::io(format!("{}: {e}", c.endpoint)))?;
    }
    Ok(ModelClients {
        policy: clients::build_policy(&policy_cfg).map_err(Failure::io)?,
        teacher: clients::build_teacher(&teacher_cfg).map_err(Failure::io)?,
        embedder: clients::build_embedder(&embedder_cfg).map_err(Failure::io)?,
    })
}

fn sample_context(record: &CotFaceRecord, base: &Path, extra_dir: Option<&Path>) -> SampleContext {
    let image_path = if record.image_path.is_absolute() {
        record.image_path.clone()
    } else {
        base.join(&record.image_path)
    };
    let extra_info_ref = extra_dir.and_then(|dir| {
        let stem = image_path.file_stem()?.to_str()?;
        let path = dir.join(format!("{stem}.fvce"));
        path.is_file().then(|| path.to_string_lossy().into_owned())
    });
    SampleContext {
        image_ref: image_path.to_string_lossy().into_owned(),
        extra_info_ref,
        label: record.label,
    }
}

fn final_mean(trajectory: &[RoundRecord]) -> Option<f64> {
    let last = trajectory.last()?;
    let n = last.candidates.len();
    (n > 0).then(|| last.candidates.iter().map(|c| c.reward.total).sum::<f64>() / n as f64)
}

pub fn run(args: EvolveArgs) -> CmdResult {
    let config = EvolutionConfig {
        candidates: args.candidates,
        keep: args.keep,
        beta: args.beta,
        epsilon: args.epsilon,
        prompt: args.prompt.clone(),
        convergence_threshold: args.convergence,
        vocab: RegionVocab::default(),
    };
    config.validate().map_err(Failure::io)?;
    if args.iterations == 0 {
        return Err(Failure::io("--iterations must be at least 1"));
    }
    let clients = build_clients(&args)?;

    let dataset_path = resolve(&args.dataset)
        .map_err(|e| Failure::io(format!("{}: {e}", args.dataset.display())))?;
    let base = dataset_path
        .parent()
        .unwrap_or(Path::new("."))
        .to_path_buf();
    let extra_dir = match &args.extra_info_dir {
        Some(dir) => {
            Some(resolve(dir).map_err(|e| Failure::io(format!("{}: {e}", dir.display())))?)
        }
        None => None,
    };
    let records = dataset::load(&dataset_path).map_err(|e| match e {
        dataset::DatasetError::Io(e) => Failure::io(format!("{}: {e}", dataset_path.display())),
        other => Failure::domain(other),
    })?;
    std::fs::create_dir_all(&args.output)
        .map_err(|e| Failure::io(format!("{}: {e}", args.output.display())))?;
    let output = resolve(&args.output).map_err(Failure::io)?;

    let pool = thread_pool(args.parallelism)?;
    let results: Vec<(usize, Option<String>, Option<f64>)> = pool.install(|| {
        records
            .par_iter()
            .map(|record| {
                let sample = sample_context(record, &base, extra_dir.as_deref());
                let seed = clients::stable_hash(&[&args.seed.to_le_bytes(), record.id.as_bytes()]);
                let (trajectory, error) = match grpo::run_evolution_with(
                    &sample,
                    &record.answer,
                    args.iterations,
                    &clients,
                    &config,
                    seed,
                ) {
                    Ok(t) => (t, None),
                    Err(e) => (e.trajectory.clone(), Some(e.to_string())),
                };
                let path = output.join(format!("{}.trajectory.jsonl", file_stem_for(&record.id)));
                let error = match grpo::write_trajectory(&trajectory, &path) {
                    Ok(()) => error,
                    Err(e) => Some(format!("{}: {e}", path.display())),
                };
                (trajectory.len(), error, final_mean(&trajectory))
            })
            .collect()
    });

    let mut failed = 0;
    for (record, (rounds, error, mean)) in records.iter().zip(&results) {
        if let Some(e) = error {
            failed += 1;
            eprintln!("error: {}: {e}", record.id);
        }
        let summary = SampleSummary {
            id: &record.id,
            rounds: *rounds,
            final_reward_mean: *mean,
            error: error.clone(),
        };
        println!("{}", serde_json::to_string(&summary).map_err(Failure::io)?);
    }
    eprintln!(
        "evolve: {} samples, {} completed, {} aborted",
        records.len(),
        records.len() - failed,
        failed
    );
    if failed > 0 {
        return Err(Failure::domain(""));
    }
    Ok(())
}
