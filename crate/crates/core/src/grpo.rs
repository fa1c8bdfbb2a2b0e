//! Group advantages, the candidate filter and the teacher-ranked evolution loop.
//!
//! One round samples `C` responses from the policy, keeps the best `M` by
//! their rank-free reward, asks the teacher to order them together with the
//! current reference answer, scores every kept response and normalizes the
//! scores into advantages. The teacher's top item becomes the round's
//! selection; it replaces the reference only when it is a sampled response,
//! i.e. when it outranks the reference.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::{
    self, ClientError, EmbedClient, PolicyClient, RankRequest, SampleRequest, TeacherClient,
};
use crate::dataset::CotFaceRecord;
use crate::response::{self, CotResponse, ParseError, RegionVocab, Verdict};
use crate::reward::{self, Embedding, RankInfo, RewardBreakdown, RewardError, SeeInputs};

pub const DEFAULT_EPSILON: f64 = 1e-8;
pub const DEFAULT_CANDIDATES: usize = 8;
pub const DEFAULT_KEEP: usize = 4;
pub const DEFAULT_ITERATIONS: usize = 3;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GrpoError {
    #[error("advantage normalization needs at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("cannot keep {requested} of {available} candidates")]
    InsufficientCandidates { available: usize, requested: usize },
    #[error("teacher unavailable: {0}")]
    TeacherUnavailable(ClientError),
    #[error("malformed ranking: {0}")]
    MalformedRanking(String),
    #[error("policy failed: {0}")]
    Policy(ClientError),
    #[error("embedder failed: {0}")]
    Embedder(ClientError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// `(R - mean) / std` with the `M - 1` sample standard deviation.
/// Groups whose deviation is below `epsilon` get all-zero advantages.
pub fn normalize_advantages(rewards: &[f64], epsilon: f64) -> Result<Vec<f64>, GrpoError> {
    let m = rewards.len();
    if m < 2 {
        return Err(GrpoError::GroupTooSmall(m));
    }
    let mean = rewards.iter().sum::<f64>() / m as f64;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    let std = var.sqrt();
    if std.is_nan() || std < epsilon {
        return Ok(vec![0.0; m]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// One sampled response and everything computed about it.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// Position in the policy's sample, used for deterministic tie breaking.
    pub index: usize,
    pub text: String,
    pub parsed: Result<CotResponse, ParseError>,
    pub embedding: Option<Embedding>,
    pub reward: RewardBreakdown,
    pub rank: Option<usize>,
    pub advantage: Option<f64>,
}

impl Candidate {
    /// Parses the text and fills in the rank-free reward components.
    pub fn new(index: usize, text: String, label: Verdict, vocab: &RegionVocab) -> Self {
        Candidate {
            index,
            parsed: response::parse_response(&text, vocab),
            reward: reward::format_and_accuracy(&text, label, vocab),
            text,
            embedding: None,
            rank: None,
            advantage: None,
        }
    }
}

/// Scoring strategy for the candidate filter.
pub trait FilterScore {
    fn score(&self, candidate: &Candidate) -> f64;
}

/// Format plus accuracy reward; needs no ranking.
#[derive(Debug, Clone, Copy, Default)]
pub struct RankFreeScore;

impl FilterScore for RankFreeScore {
    fn score(&self, candidate: &Candidate) -> f64 {
        candidate.reward.rank_free()
    }
}

/// Keeps the `keep` highest-scoring candidates, breaking ties by lower
/// sample index. Survivors stay in their original order.
pub fn filter_candidates(
    pool: Vec<Candidate>,
    keep: usize,
    scorer: &dyn FilterScore,
) -> Result<Vec<Candidate>, GrpoError> {
    if keep == 0 || keep > pool.len() {
        return Err(GrpoError::InsufficientCandidates {
            available: pool.len(),
            requested: keep,
        });
    }
    let scores: Vec<f64> = pool.iter().map(|c| scorer.score(c)).collect();
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(pool[a].index.cmp(&pool[b].index))
    });
    let mut chosen = vec![false; pool.len()];
    for &i in &order[..keep] {
        chosen[i] = true;
    }
    Ok(pool
        .into_iter()
        .zip(chosen)
        .filter_map(|(c, keep)| keep.then_some(c))
        .collect())
}

/// Teacher ordering of the pool plus the reference answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolRanking {
    /// 1-based rank of each pool item, indexed like the pool.
    pub candidate_ranks: Vec<usize>,
    /// 1-based rank of the reference answer.
    pub label_rank: usize,
    /// Item indices best first; the reference is index `pool.len()`.
    pub order: Vec<usize>,
}

/// Ranks `pool_texts` together with `label_text` (appended last).
///
/// When the teacher ties a candidate with the label, either by reporting
/// equal scores or because the texts are identical, the label is moved
/// above it.
pub fn rank_pool(
    pool_texts: &[String],
    label_text: &str,
    image_ref: &str,
    teacher: &dyn TeacherClient,
) -> Result<PoolRanking, GrpoError> {
    if pool_texts.is_empty() {
        return Err(GrpoError::InsufficientCandidates {
            available: 0,
            requested: 1,
        });
    }
    let label = pool_texts.len();
    let mut items = pool_texts.to_vec();
    items.push(label_text.to_string());
    let request = RankRequest {
        image_ref: image_ref.to_string(),
        items,
        image_data: None,
    };
    let response = clients::teacher_rank(teacher, &request).map_err(|e| match e {
        ClientError::MalformedRanking(m) => GrpoError::MalformedRanking(m),
        other => GrpoError::TeacherUnavailable(other),
    })?;

    let tied = |i: usize| {
        request.items[i].trim() == label_text.trim()
            || response.scores.as_ref().is_some_and(|s| s[i] == s[label])
    };
    let mut order = response.order;
    let label_pos = order.iter().position(|&i| i == label).expect("permutation");
    if let Some(first_tie) = order[..label_pos].iter().position(|&i| tied(i)) {
        order.remove(label_pos);
        order.insert(first_tie, label);
    }

    let mut ranks = vec![0; label + 1];
    for (pos, &item) in order.iter().enumerate() {
        ranks[item] = pos + 1;
    }
    let label_rank = ranks.pop().expect("label rank");
    Ok(PoolRanking {
        candidate_ranks: ranks,
        label_rank,
        order,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionConfig {
    /// Responses sampled per round (C).
    pub candidates: usize,
    /// Responses kept after filtering (M).
    pub keep: usize,
    pub beta: f64,
    pub epsilon: f64,
    pub prompt: String,
    /// Stop early once the mean dispersion coefficient exceeds this.
    pub convergence_threshold: Option<f64>,
    pub vocab: RegionVocab,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            candidates: DEFAULT_CANDIDATES,
            keep: DEFAULT_KEEP,
            beta: reward::DEFAULT_BETA,
            epsilon: DEFAULT_EPSILON,
            prompt: clients::STANDARD_PROMPT.to_string(),
            convergence_threshold: None,
            vocab: RegionVocab::default(),
        }
    }
}

fn is_positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if self.keep == 0 || self.candidates < self.keep {
            return Err(GrpoError::InvalidConfig(format!(
                "need candidates >= keep >= 1, got candidates={} keep={}",
                self.candidates, self.keep
            )));
        }
        if !is_positive(self.beta) {
            return Err(GrpoError::InvalidConfig(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if !is_positive(self.epsilon) {
            return Err(GrpoError::InvalidConfig(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Clone)]
pub struct ModelClients {
    pub policy: Arc<dyn PolicyClient>,
    pub teacher: Arc<dyn TeacherClient>,
    pub embedder: Arc<dyn EmbedClient>,
}

/// What the loop needs to know about the sample being evolved.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleContext {
    pub image_ref: String,
    pub extra_info_ref: Option<String>,
    pub label: Verdict,
}

impl SampleContext {
    pub fn from_record(record: &CotFaceRecord) -> Self {
        SampleContext {
            image_ref: record.image_path.to_string_lossy().into_owned(),
            extra_info_ref: None,
            label: record.label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateLog {
    pub text: String,
    pub reward: RewardBreakdown,
    pub rank: usize,
    pub advantage: f64,
}

/// One line of the trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: usize,
    /// Reference answer the round was scored against.
    pub reference: String,
    /// Teacher's top item.
    pub selected: String,
    pub candidates: Vec<CandidateLog>,
    pub label_rank: usize,
    pub alpha_mean: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionState {
    pub t: usize,
    pub reference: String,
    pub pool: Vec<Candidate>,
    pub trajectory: Vec<RoundRecord>,
    pub rng_seed: u64,
}

impl EvolutionState {
    /// Starts at iteration 1 with the dataset answer as reference.
    pub fn new(label_answer: impl Into<String>, rng_seed: u64) -> Self {
        EvolutionState {
            t: 1,
            reference: label_answer.into(),
            pool: Vec::new(),
            trajectory: Vec::new(),
            rng_seed,
        }
    }

    pub fn round_seed(&self) -> u64 {
        clients::stable_hash(&[&self.rng_seed.to_le_bytes(), &(self.t as u64).to_le_bytes()])
    }
}

fn embed_text(text: &str) -> String {
    // Remote embedders reject empty strings; an empty response embeds as a space.
    if text.is_empty() {
        " ".to_string()
    } else {
        text.to_string()
    }
}

/// Runs one round and returns the next state. `state` is never modified, so
/// a failed round leaves the caller's state as it was.
pub fn run_evolution_round(
    state: &EvolutionState,
    sample: &SampleContext,
    clients: &ModelClients,
    config: &EvolutionConfig,
) -> Result<EvolutionState, GrpoError> {
    config.validate()?;
    let seed = state.round_seed();
    let request = SampleRequest {
        prompt: config.prompt.clone(),
        image_ref: sample.image_ref.clone(),
        extra_info_ref: sample.extra_info_ref.clone(),
        previous_answer: state.reference.clone(),
        n: config.candidates,
        seed: Some(seed),
        image_data: None,
    };
    let texts =
        clients::policy_sample(clients.policy.as_ref(), &request).map_err(GrpoError::Policy)?;

    let sampled: Vec<Candidate> = texts
        .into_iter()
        .enumerate()
        .map(|(i, text)| Candidate::new(i, text, sample.label, &config.vocab))
        .collect();
    let mut pool = filter_candidates(sampled, config.keep, &RankFreeScore)?;
    let m = pool.len();

    let mut embed_inputs: Vec<String> = pool.iter().map(|c| embed_text(&c.text)).collect();
    embed_inputs.push(embed_text(&state.reference));
    let mut embeddings =
        clients::embed(clients.embedder.as_ref(), &embed_inputs).map_err(GrpoError::Embedder)?;
    let reference_embedding = embeddings.pop().expect("reference embedding");

    let pool_texts: Vec<String> = pool.iter().map(|c| c.text.clone()).collect();
    let ranking = rank_pool(
        &pool_texts,
        &state.reference,
        &sample.image_ref,
        clients.teacher.as_ref(),
    )?;

    let mut alphas = Vec::with_capacity(m);
    for (i, candidate) in pool.iter_mut().enumerate() {
        let alpha = reward::dispersion_coefficient(i, &embeddings)?.clamp(0.0, 1.0);
        let cos_label = reward::cosine(&embeddings[i], &reference_embedding)?;
        let see = SeeInputs {
            rank: RankInfo {
                rank: ranking.candidate_ranks[i],
                label_rank: ranking.label_rank,
                group_size: m,
            },
            cos_label,
            alpha,
            beta: config.beta,
        };
        candidate.reward = reward::total_reward(&candidate.text, sample.label, see, &config.vocab)?;
        candidate.rank = Some(ranking.candidate_ranks[i]);
        candidate.embedding = Some(embeddings[i].clone());
        alphas.push(alpha);
    }

    let totals: Vec<f64> = pool.iter().map(|c| c.reward.total).collect();
    let advantages = if m >= 2 {
        normalize_advantages(&totals, config.epsilon)?
    } else {
        vec![0.0; m]
    };
    for (candidate, adv) in pool.iter_mut().zip(&advantages) {
        candidate.advantage = Some(*adv);
    }

    let top = ranking.order[0];
    let selected = if top == m {
        state.reference.clone()
    } else {
        pool[top].text.clone()
    };
    let alpha_mean = alphas.iter().sum::<f64>() / m as f64;

    let record = RoundRecord {
        t: state.t,
        reference: state.reference.clone(),
        selected: selected.clone(),
        candidates: pool
            .iter()
            .map(|c| CandidateLog {
                text: c.text.clone(),
                reward: c.reward,
                rank: c.rank.expect("ranked"),
                advantage: c.advantage.expect("normalized"),
            })
            .collect(),
        label_rank: ranking.label_rank,
        alpha_mean,
        seed,
    };

    let mut trajectory = state.trajectory.clone();
    trajectory.push(record);
    Ok(EvolutionState {
        t: state.t + 1,
        // The top item is a candidate only if it outranks the reference.
        reference: selected,
        pool,
        trajectory,
        rng_seed: state.rng_seed,
    })
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("round {iteration} failed: {source}")]
pub struct EvolutionError {
    pub iteration: usize,
    /// Rounds completed before the failure.
    pub trajectory: Vec<RoundRecord>,
    #[source]
    pub source: GrpoError,
}

/// Runs up to `iterations` rounds for one dataset record.
pub fn run_evolution(
    record: &CotFaceRecord,
    iterations: usize,
    clients: &ModelClients,
    config: &EvolutionConfig,
    seed: u64,
) -> Result<Vec<RoundRecord>, EvolutionError> {
    run_evolution_with(
        &SampleContext::from_record(record),
        &record.answer,
        iterations,
        clients,
        config,
        seed,
    )
}

pub fn run_evolution_with(
    sample: &SampleContext,
    label_answer: &str,
    iterations: usize,
    clients: &ModelClients,
    config: &EvolutionConfig,
    seed: u64,
) -> Result<Vec<RoundRecord>, EvolutionError> {
    let fail = |iteration, trajectory: Vec<RoundRecord>, source| EvolutionError {
        iteration,
        trajectory,
        source,
    };
    if iterations == 0 {
        return Err(fail(
            0,
            Vec::new(),
            GrpoError::InvalidConfig("iterations must be at least 1".into()),
        ));
    }
    let mut state = EvolutionState::new(label_answer, seed);
    for _ in 0..iterations {
        state = match run_evolution_round(&state, sample, clients, config) {
            Ok(next) => next,
            Err(e) => return Err(fail(state.t, state.trajectory, e)),
        };
        let converged = match (config.convergence_threshold, state.trajectory.last()) {
            (Some(threshold), Some(last)) => last.alpha_mean > threshold,
            _ => false,
        };
        if converged {
            tracing::debug!(t = state.t - 1, "converged");
            break;
        }
    }
    Ok(state.trajectory)
}

/// Serializes a trajectory as JSON Lines.
pub fn trajectory_jsonl(trajectory: &[RoundRecord]) -> String {
    let mut out = String::new();
    for record in trajectory {
        out.push_str(&serde_json::to_string(record).expect("round records serialize"));
        out.push('\n');
    }
    out
}

/// Writes a trajectory file atomically (temporary file plus rename).
pub fn write_trajectory(trajectory: &[RoundRecord], path: &Path) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(trajectory_jsonl(trajectory).as_bytes())?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
