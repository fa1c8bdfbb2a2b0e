//! Classification metrics (ACC, AUC, EER) and the CIDEr caption score.
//!
//! The positive class is [`Verdict::Forgery`]; higher scores mean "more
//! likely forged".

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::response::Verdict;

#[derive(Debug, Clone, Copy, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("no items")]
    Empty,
    #[error("both classes are required")]
    OneClassOnly,
    #[error("item {0} has no references")]
    EmptyReference(usize),
    #[error("item {0} has a non-finite score")]
    NonFiniteScore(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredPrediction {
    pub score: f64,
    pub label: Verdict,
}

impl ScoredPrediction {
    pub fn new(score: f64, label: Verdict) -> Self {
        ScoredPrediction { score, label }
    }
}

/// Score used when a prediction carries no confidence of its own.
pub fn verdict_score(verdict: Option<Verdict>) -> f64 {
    match verdict {
        Some(Verdict::Forgery) => 1.0,
        Some(Verdict::Real) => 0.0,
        None => 0.5,
    }
}

pub fn accuracy(predictions: &[Option<Verdict>], labels: &[Verdict]) -> Result<f64, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            left: predictions.len(),
            right: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(MetricsError::Empty);
    }
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| **p == Some(**l))
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

fn class_counts(items: &[ScoredPrediction]) -> Result<(usize, usize), MetricsError> {
    if let Some(i) = items.iter().position(|p| !p.score.is_finite()) {
        return Err(MetricsError::NonFiniteScore(i));
    }
    let pos = items.iter().filter(|p| p.label == Verdict::Forgery).count();
    let neg = items.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricsError::OneClassOnly);
    }
    Ok((pos, neg))
}

/// Mann-Whitney AUC: the fraction of (positive, negative) pairs ordered
/// correctly, ties counting one half. Computed from mid-ranks.
pub fn auc(items: &[ScoredPrediction]) -> Result<f64, MetricsError> {
    let (pos, neg) = class_counts(items)?;
    let mut sorted: Vec<&ScoredPrediction> = items.iter().collect();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));

    // Sum of doubled mid-ranks of positives, kept integral.
    let mut doubled_rank_sum: u128 = 0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].score == sorted[i].score {
            j += 1;
        }
        // Ranks i+1..=j share the mid-rank (i + 1 + j) / 2.
        let positives = sorted[i..j]
            .iter()
            .filter(|p| p.label == Verdict::Forgery)
            .count() as u128;
        doubled_rank_sum += positives * (i + 1 + j) as u128;
        i = j;
    }
    let p = pos as u128;
    let doubled_u = doubled_rank_sum - p * (p + 1);
    Ok(doubled_u as f64 / (2 * pos * neg) as f64)
}

/// Empirical ROC as `(fpr, fnr)` points, from the strictest threshold
/// (nothing flagged) to the loosest (everything flagged). Items with equal
/// scores move together.
pub fn roc_points(items: &[ScoredPrediction]) -> Result<Vec<(f64, f64)>, MetricsError> {
    let (pos, neg) = class_counts(items)?;
    let mut sorted: Vec<&ScoredPrediction> = items.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut points = vec![(0.0, 1.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let score = sorted[i].score;
        while i < sorted.len() && sorted[i].score == score {
            match sorted[i].label {
                Verdict::Forgery => tp += 1,
                Verdict::Real => fp += 1,
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, (pos - tp) as f64 / pos as f64));
    }
    Ok(points)
}

/// Equal error rate: where FPR meets FNR on the ROC polyline, linearly
/// interpolated between adjacent operating points.
pub fn eer(items: &[ScoredPrediction]) -> Result<f64, MetricsError> {
    let points = roc_points(items)?;
    // fpr - fnr goes from -1 to +1 and is non-decreasing along the curve.
    for pair in points.windows(2) {
        let (f1, n1) = pair[0];
        let (f2, n2) = pair[1];
        let d1 = f1 - n1;
        let d2 = f2 - n2;
        if d1 == 0.0 {
            return Ok(f1);
        }
        if d1 < 0.0 && d2 >= 0.0 {
            let t = d1 / (d1 - d2);
            return Ok(f1 + t * (f2 - f1));
        }
    }
    let (f, n) = *points.last().expect("roc has points");
    Ok((f + n) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CiderVariant {
    /// TF-IDF n-gram cosine against the mean reference vector.
    #[default]
    Original,
    /// Clipped counts, Gaussian length penalty (sigma 6), averaged per reference.
    D,
}

pub const CIDER_MAX_N: usize = 4;
const CIDER_D_SIGMA: f64 = 6.0;

pub fn cider_tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

type NgramCounts = HashMap<Vec<String>, f64>;

fn ngram_counts(tokens: &[String], n: usize) -> NgramCounts {
    let mut counts = NgramCounts::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram.to_vec()).or_insert(0.0) += 1.0;
        }
    }
    counts
}

/// Immutable corpus statistics: per-order document frequencies over the reference sets.
struct IdfTable {
    log_corpus: f64,
    df: Vec<HashMap<Vec<String>, usize>>,
}

impl IdfTable {
    fn build(references: &[Vec<Vec<String>>]) -> Self {
        let mut df = vec![HashMap::new(); CIDER_MAX_N];
        for refs in references {
            for (n, table) in df.iter_mut().enumerate() {
                let mut seen: Vec<Vec<String>> = refs
                    .iter()
                    .flat_map(|r| ngram_counts(r, n + 1).into_keys())
                    .collect();
                seen.sort();
                seen.dedup();
                for gram in seen {
                    *table.entry(gram).or_insert(0) += 1;
                }
            }
        }
        IdfTable {
            log_corpus: (references.len() as f64).ln(),
            df,
        }
    }

    fn weight(&self, n: usize, gram: &[String]) -> f64 {
        let df = self.df[n].get(gram).copied().unwrap_or(0).max(1);
        self.log_corpus - (df as f64).ln()
    }

    fn tfidf(&self, n: usize, counts: &NgramCounts) -> NgramCounts {
        counts
            .iter()
            .map(|(g, c)| (g.clone(), c * self.weight(n, g)))
            .collect()
    }
}

fn norm(v: &NgramCounts) -> f64 {
    v.values().map(|x| x * x).sum::<f64>().sqrt()
}

fn cosine_sparse(a: &NgramCounts, b: &NgramCounts) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().filter_map(|(g, x)| b.get(g).map(|y| x * y)).sum();
    dot / (na * nb)
}

fn cider_item_original(idf: &IdfTable, cand: &[String], refs: &[Vec<String>]) -> f64 {
    let mut total = 0.0;
    for n in 0..CIDER_MAX_N {
        let c = idf.tfidf(n, &ngram_counts(cand, n + 1));
        let mut mean = NgramCounts::new();
        for r in refs {
            for (g, v) in idf.tfidf(n, &ngram_counts(r, n + 1)) {
                *mean.entry(g).or_insert(0.0) += v / refs.len() as f64;
            }
        }
        total += cosine_sparse(&c, &mean);
    }
    10.0 * total / CIDER_MAX_N as f64
}

fn cider_item_d(idf: &IdfTable, cand: &[String], refs: &[Vec<String>]) -> f64 {
    let mut total = 0.0;
    for n in 0..CIDER_MAX_N {
        let c = idf.tfidf(n, &ngram_counts(cand, n + 1));
        let nc = norm(&c);
        let mut per_ref = 0.0;
        for r in refs {
            let rv = idf.tfidf(n, &ngram_counts(r, n + 1));
            let nr = norm(&rv);
            if nc == 0.0 || nr == 0.0 {
                continue;
            }
            let dot: f64 = c
                .iter()
                .filter_map(|(g, x)| rv.get(g).map(|y| x.min(*y) * y))
                .sum();
            let delta = cand.len() as f64 - r.len() as f64;
            let penalty = (-(delta * delta) / (2.0 * CIDER_D_SIGMA * CIDER_D_SIGMA)).exp();
            per_ref += penalty * dot / (nc * nr);
        }
        total += per_ref / refs.len() as f64;
    }
    10.0 * total / CIDER_MAX_N as f64
}

/// Corpus CIDEr: mean per-item score, IDF computed over the reference sets.
pub fn cider(
    candidates: &[String],
    references: &[Vec<String>],
    variant: CiderVariant,
) -> Result<f64, MetricsError> {
    if candidates.len() != references.len() {
        return Err(MetricsError::LengthMismatch {
            left: candidates.len(),
            right: references.len(),
        });
    }
    if candidates.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(i) = references.iter().position(Vec::is_empty) {
        return Err(MetricsError::EmptyReference(i));
    }
    let refs: Vec<Vec<Vec<String>>> = references
        .iter()
        .map(|set| set.iter().map(|r| cider_tokenize(r)).collect())
        .collect();
    let idf = IdfTable::build(&refs);
    let total: f64 = candidates
        .iter()
        .zip(&refs)
        .map(|(c, r)| {
            let c = cider_tokenize(c);
            match variant {
                CiderVariant::Original => cider_item_original(&idf, &c, r),
                CiderVariant::D => cider_item_d(&idf, &c, r),
            }
        })
        .sum();
    Ok(total / candidates.len() as f64)
}

/// Metrics report written by the evaluator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub auc: f64,
    pub eer: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cider: Option<f64>,
    pub n: usize,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    #[serde(default)]
    pub score: Option<f64>,
    /// `"real"`, `"forgery"` or `"unknown"`.
    pub verdict: PredictedVerdict,
    pub label: Verdict,
    #[serde(default)]
    pub candidate_text: Option<String>,
    #[serde(default)]
    pub reference_texts: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictedVerdict {
    Real,
    Forgery,
    Unknown,
}

impl PredictedVerdict {
    pub fn verdict(self) -> Option<Verdict> {
        match self {
            PredictedVerdict::Real => Some(Verdict::Real),
            PredictedVerdict::Forgery => Some(Verdict::Forgery),
            PredictedVerdict::Unknown => None,
        }
    }
}

/// Computes the full report. CIDEr is included only when every record
/// carries both a candidate text and references.
pub fn evaluate(
    records: &[PredictionRecord],
    variant: CiderVariant,
) -> Result<MetricsReport, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    let verdicts: Vec<Option<Verdict>> = records.iter().map(|r| r.verdict.verdict()).collect();
    let labels: Vec<Verdict> = records.iter().map(|r| r.label).collect();
    let scored: Vec<ScoredPrediction> = records
        .iter()
        .map(|r| {
            ScoredPrediction::new(
                r.score
                    .unwrap_or_else(|| verdict_score(r.verdict.verdict())),
                r.label,
            )
        })
        .collect();
    let (n_pos, n_neg) = class_counts(&scored)?;

    let captions: Option<(Vec<String>, Vec<Vec<String>>)> = records
        .iter()
        .map(|r| Some((r.candidate_text.clone()?, r.reference_texts.clone()?)))
        .collect::<Option<Vec<_>>>()
        .map(|pairs| pairs.into_iter().unzip());
    let cider = match captions {
        Some((c, r)) => Some(cider(&c, &r, variant)?),
        None => None,
    };

    Ok(MetricsReport {
        acc: accuracy(&verdicts, &labels)?,
        auc: auc(&scored)?,
        eer: eer(&scored)?,
        cider,
        n: records.len(),
        n_pos,
        n_neg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items(pos: &[f64], neg: &[f64]) -> Vec<ScoredPrediction> {
        pos.iter()
            .map(|&s| ScoredPrediction::new(s, Verdict::Forgery))
            .chain(neg.iter().map(|&s| ScoredPrediction::new(s, Verdict::Real)))
            .collect()
    }

    #[test]
    fn accuracy_cases() {
        use Verdict::*;
        assert_eq!(
            accuracy(&[Some(Real), Some(Forgery)], &[Real, Forgery]).unwrap(),
            1.0
        );
        assert_eq!(accuracy(&[None, None], &[Real, Forgery]).unwrap(), 0.0);
        assert_eq!(
            accuracy(
                &[Some(Real), Some(Forgery), Some(Real), Some(Real)],
                &[Real, Forgery, Real, Forgery]
            )
            .unwrap(),
            0.75
        );
        assert_eq!(accuracy(&[], &[]), Err(MetricsError::Empty));
        assert!(matches!(
            accuracy(&[None], &[Real, Real]),
            Err(MetricsError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn auc_cases() {
        assert_eq!(auc(&items(&[0.9, 0.8], &[0.3, 0.1])).unwrap(), 1.0);
        assert_eq!(auc(&items(&[0.9, 0.4], &[0.6, 0.1])).unwrap(), 0.75);
        assert_eq!(auc(&items(&[0.5, 0.5], &[0.5, 0.5, 0.5])).unwrap(), 0.5);
        assert_eq!(auc(&items(&[0.5], &[])), Err(MetricsError::OneClassOnly));
    }

    #[test]
    fn eer_cases() {
        assert_eq!(eer(&items(&[0.9, 0.8], &[0.3, 0.1])).unwrap(), 0.0);
        assert_eq!(eer(&items(&[0.3, 0.1], &[0.9, 0.8])).unwrap(), 1.0);
        assert_eq!(eer(&items(&[0.5, 0.5], &[0.5, 0.5])).unwrap(), 0.5);
        // pos {0.9, 0.4}, neg {0.6, 0.1}: points (0,1) (0,.5) (.5,.5)
        assert_eq!(eer(&items(&[0.9, 0.4], &[0.6, 0.1])).unwrap(), 0.5);
    }

    #[test]
    fn cider_cases() {
        let none = cider(
            &["a b c".into()],
            &[vec!["x y z".into()]],
            CiderVariant::Original,
        )
        .unwrap();
        assert_eq!(none, 0.0);

        let single = cider(
            &["a b c".into()],
            &[vec!["a b c".into()]],
            CiderVariant::Original,
        )
        .unwrap();
        assert_eq!(single, 0.0);

        let pair = cider(
            &["a b c d".into(), "p q r s".into()],
            &[vec!["a b c d".into()], vec!["w x y z".into()]],
            CiderVariant::Original,
        )
        .unwrap();
        // Item scores 10 and 0.
        assert!((pair - 5.0).abs() < 1e-12);

        assert_eq!(
            cider(&["a".into()], &[vec![]], CiderVariant::Original),
            Err(MetricsError::EmptyReference(0))
        );
    }

    #[test]
    fn cider_d_exact_match_scores_ten() {
        let v = cider(
            &["a b c d".into(), "p q r s".into()],
            &[vec!["a b c d".into()], vec!["p q r s".into()]],
            CiderVariant::D,
        )
        .unwrap();
        assert!((v - 10.0).abs() < 1e-12);
    }
}
