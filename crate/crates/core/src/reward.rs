//! Rule-based rewards: format (tag + keyword), accuracy and self-evolution.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::response::{self, RegionVocab, Verdict};

pub const TAG_REWARD: f64 = 0.5;
pub const DEFAULT_BETA: f64 = 1.5;

#[derive(Debug, Clone, Copy, Error, PartialEq)]
pub enum RewardError {
    #[error("cosine of a zero vector is undefined")]
    ZeroVector,
    #[error("embedding dimensions differ ({left} vs {right})")]
    DimensionMismatch { left: usize, right: usize },
    #[error("invalid rank: r={rank}, label rank={label_rank}, group size={group_size}")]
    InvalidRank {
        rank: usize,
        label_rank: usize,
        group_size: usize,
    },
    #[error("candidate index {index} outside group of {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("empty group")]
    EmptyGroup,
}

/// The reward components for one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub tag: f64,
    pub key: f64,
    pub acc: f64,
    pub see: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn new(tag: f64, key: f64, acc: f64, see: f64) -> Self {
        RewardBreakdown {
            tag,
            key,
            acc,
            see,
            total: tag + key + acc + see,
        }
    }

    /// Format plus accuracy, i.e. everything that needs no ranking.
    pub fn rank_free(&self) -> f64 {
        self.tag + self.key + self.acc
    }

    pub fn with_see(self, see: f64) -> Self {
        RewardBreakdown::new(self.tag, self.key, self.acc, see)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Self {
        Embedding(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for Embedding {
    fn from(values: Vec<f64>) -> Self {
        Embedding(values)
    }
}

/// Text the format and accuracy rules look at: the answer block when the
/// response is well formed, otherwise the whole response.
fn scored_text(raw: &str) -> &str {
    response::answer_block(raw).unwrap_or(raw)
}

pub fn tag_reward(raw: &str) -> f64 {
    if response::is_well_formed(raw) {
        TAG_REWARD
    } else {
        0.0
    }
}

/// Fraction of the vocabulary present as `Name:` headers.
pub fn keyword_reward(raw: &str, vocab: &RegionVocab) -> f64 {
    let found = response::count_region_headers(scored_text(raw), vocab);
    found as f64 / vocab.len() as f64
}

pub fn accuracy_reward(candidate: Option<Verdict>, label: Verdict) -> f64 {
    if candidate == Some(label) {
        1.0
    } else {
        0.0
    }
}

/// Verdict of a raw response under the keyword rule.
pub fn classify(raw: &str) -> Option<Verdict> {
    response::extract_verdict(scored_text(raw))
}

pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64, RewardError> {
    if a.dimension() != b.dimension() {
        return Err(RewardError::DimensionMismatch {
            left: a.dimension(),
            right: b.dimension(),
        });
    }
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Err(RewardError::ZeroVector);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Mean cosine of candidate `index` against every member of `group`, itself included.
pub fn dispersion_coefficient(index: usize, group: &[Embedding]) -> Result<f64, RewardError> {
    if group.is_empty() {
        return Err(RewardError::EmptyGroup);
    }
    let me = group.get(index).ok_or(RewardError::IndexOutOfRange {
        index,
        len: group.len(),
    })?;
    let mut sum = 0.0;
    for other in group {
        sum += cosine(me, other)?;
    }
    Ok(sum / group.len() as f64)
}

/// Where a candidate landed in the teacher's ordering of the pool plus the label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankInfo {
    /// 1-based rank of the candidate; 1 is best.
    pub rank: usize,
    /// 1-based rank of the reference answer in the same ordering.
    pub label_rank: usize,
    /// Number of candidates M (the ranked pool holds M + 1 items).
    pub group_size: usize,
}

impl RankInfo {
    fn validate(&self) -> Result<(), RewardError> {
        let max = self.group_size + 1;
        let ok = self.group_size >= 1
            && (1..=max).contains(&self.rank)
            && (1..=max).contains(&self.label_rank)
            && self.rank != self.label_rank;
        if ok {
            Ok(())
        } else {
            Err(RewardError::InvalidRank {
                rank: self.rank,
                label_rank: self.label_rank,
                group_size: self.group_size,
            })
        }
    }
}

/// Rank-based bonus with an exploration term for candidates ranked above the label.
///
/// `alpha` is clamped to `[0, 1]`, and the rank term `(M - r) / M` is floored
/// at zero so that the last item of the `M + 1` pool earns nothing rather
/// than a negative reward.
pub fn self_evolution_reward(
    info: RankInfo,
    cos_label: f64,
    alpha: f64,
    beta: f64,
) -> Result<f64, RewardError> {
    info.validate()?;
    let m = info.group_size as f64;
    let rank_term = beta * (m - info.rank as f64).max(0.0) / m;
    let alpha = alpha.clamp(0.0, 1.0);
    if info.rank < info.label_rank {
        Ok((rank_term + (1.0 - cos_label).exp()) * alpha)
    } else {
        Ok(rank_term * alpha)
    }
}

/// Ranking-dependent inputs to the total reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeeInputs {
    pub rank: RankInfo,
    pub cos_label: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Rank-free part of the reward: tag, keyword and accuracy.
pub fn format_and_accuracy(raw: &str, label: Verdict, vocab: &RegionVocab) -> RewardBreakdown {
    RewardBreakdown::new(
        tag_reward(raw),
        keyword_reward(raw, vocab),
        accuracy_reward(classify(raw), label),
        0.0,
    )
}

pub fn total_reward(
    raw: &str,
    label: Verdict,
    see: SeeInputs,
    vocab: &RegionVocab,
) -> Result<RewardBreakdown, RewardError> {
    let r_see = self_evolution_reward(see.rank, see.cos_label, see.alpha, see.beta)?;
    Ok(format_and_accuracy(raw, label, vocab).with_see(r_see))
}
