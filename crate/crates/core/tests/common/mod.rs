//! Straight-line reference implementations and generators shared by the
//! integration tests. Nothing here calls into the library's scoring code.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;

pub const REGIONS: [&str; 8] = [
    "Overall image",
    "Face",
    "Eyes",
    "Eyebrows",
    "Nose",
    "Mouth",
    "Skin",
    "Neck",
];

const TAGS: [&str; 4] = ["<think>", "</think>", "<answer>", "</answer>"];

const WORDS: [&str; 24] = [
    "the",
    "blur",
    "seam",
    "lighting",
    "is",
    "smooth",
    "edge",
    "shadow",
    "real",
    "fake",
    "not",
    "no",
    "texture",
    "authentic",
    "tampered",
    "isn't",
    "looks",
    "quite",
    "genuine",
    "forged",
    "without",
    "doubt",
    "color",
    "manipulated",
];

// ----- rewards -----

fn tag_positions(raw: &str) -> Option<[usize; 4]> {
    let mut pos = [0; 4];
    for (k, tag) in TAGS.iter().enumerate() {
        if raw.matches(tag).count() != 1 {
            return None;
        }
        pos[k] = raw.find(tag).unwrap();
    }
    (pos[0] < pos[1] && pos[1] < pos[2] && pos[2] < pos[3]).then_some(pos)
}

/// Valid only for texts whose bodies never contain `<`.
pub fn tag(raw: &str) -> f64 {
    if tag_positions(raw).is_some() {
        0.5
    } else {
        0.0
    }
}

pub fn scored(raw: &str) -> &str {
    match tag_positions(raw) {
        Some(p) => &raw[p[2] + "<answer>".len()..p[3]],
        None => raw,
    }
}

pub fn has_header(text: &str, name: &str) -> bool {
    let hay = text.to_ascii_lowercase();
    let needle = format!("{}:", name.to_ascii_lowercase());
    let bytes = hay.as_bytes();
    let mut from = 0;
    while let Some(off) = hay[from..].find(&needle) {
        let at = from + off;
        let boundary = at == 0 || {
            let b = bytes[at - 1];
            !(b.is_ascii_alphanumeric() || b == b'_' || b >= 0x80)
        };
        if boundary {
            return true;
        }
        from = at + 1;
    }
    false
}

pub fn key(raw: &str) -> f64 {
    let text = scored(raw);
    REGIONS.iter().filter(|r| has_header(text, r)).count() as f64 / REGIONS.len() as f64
}

pub fn tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars().chain(std::iter::once(' ')) {
        if ch.is_alphanumeric() || ch == '\'' {
            cur.push(ch);
        } else if !cur.is_empty() {
            let t = cur.trim_matches('\'').to_lowercase();
            if !t.is_empty() {
                out.push(t);
            }
            cur.clear();
        }
    }
    out
}

/// `Some(true)` forgery, `Some(false)` real, `None` unknown.
pub fn verdict(text: &str) -> Option<bool> {
    let toks = tokens(text);
    let (mut fake, mut real) = (false, false);
    for i in 0..toks.len() {
        let t = toks[i].as_str();
        let is_fake = matches!(
            t,
            "fake" | "forged" | "forgery" | "manipulated" | "tampered"
        );
        let is_real = matches!(t, "real" | "authentic" | "genuine");
        if !(is_fake || is_real) {
            continue;
        }
        let mut negated = false;
        for back in 1..=3 {
            if i >= back {
                let p = toks[i - back].as_str();
                if matches!(p, "not" | "no" | "never" | "nor" | "neither" | "without")
                    || p.ends_with("n't")
                {
                    negated = true;
                }
            }
        }
        if !negated {
            fake = fake || is_fake;
            real = real || is_real;
        }
    }
    match (fake, real) {
        (true, false) => Some(true),
        (false, true) => Some(false),
        _ => None,
    }
}

pub fn acc(raw: &str, label_is_fake: bool) -> f64 {
    if verdict(scored(raw)) == Some(label_is_fake) {
        1.0
    } else {
        0.0
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

pub fn alpha(i: usize, group: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for g in group {
        total += cosine(&group[i], g);
    }
    total / group.len() as f64
}

pub fn see(rank: usize, label_rank: usize, m: usize, cos_label: f64, alpha: f64, beta: f64) -> f64 {
    let alpha = alpha.clamp(0.0, 1.0);
    let rank_term = if rank > m {
        0.0
    } else {
        beta * (m - rank) as f64 / m as f64
    };
    if rank < label_rank {
        (rank_term + (1.0 - cos_label).exp()) * alpha
    } else {
        rank_term * alpha
    }
}

// ----- advantages -----

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sample_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

// ----- metrics -----

/// Pairs (positive, negative) ordered correctly, ties counting one half.
pub fn auc_pairs(scores: &[f64], positive: &[bool]) -> f64 {
    let mut twice_wins = 0u64;
    let mut pairs = 0u64;
    for (i, &pi) in positive.iter().enumerate() {
        for (j, &pj) in positive.iter().enumerate() {
            if pi && !pj {
                pairs += 1;
                if scores[i] > scores[j] {
                    twice_wins += 2;
                } else if scores[i] == scores[j] {
                    twice_wins += 1;
                }
            }
        }
    }
    twice_wins as f64 / (2 * pairs) as f64
}

/// Sweeps `steps` thresholds over `[0, 1]` from strict to loose, flagging
/// scores above the threshold, and interpolates at the FPR - FNR sign change.
pub fn eer_sweep(scores: &[f64], positive: &[bool], steps: usize) -> f64 {
    let n_pos = positive.iter().filter(|p| **p).count() as f64;
    let n_neg = positive.len() as f64 - n_pos;
    let rates = |t: f64| {
        let mut fp = 0.0;
        let mut fn_ = 0.0;
        for (s, &p) in scores.iter().zip(positive) {
            let flagged = *s > t;
            if flagged && !p {
                fp += 1.0;
            }
            if !flagged && p {
                fn_ += 1.0;
            }
        }
        (fp / n_neg, fn_ / n_pos)
    };
    let mut prev = (0.0, 1.0);
    for i in (0..=steps + 1).rev() {
        let t = (i as f64 - 0.5) / steps as f64;
        let (fpr, fnr) = rates(t);
        let d = fpr - fnr;
        if d == 0.0 {
            return fpr;
        }
        if d > 0.0 {
            let dp = prev.0 - prev.1;
            let s = dp / (dp - d);
            return prev.0 + s * (fpr - prev.0);
        }
        prev = (fpr, fnr);
    }
    unreachable!("the loosest threshold flags everything")
}

// ----- generators -----

fn sentence<R: Rng>(rng: &mut R, len: usize) -> String {
    (0..len)
        .map(|_| *WORDS.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

fn header_case<R: Rng>(rng: &mut R, name: &str) -> String {
    match rng.gen_range(0..3) {
        0 => name.to_string(),
        1 => name.to_ascii_uppercase(),
        _ => name.to_ascii_lowercase(),
    }
}

/// Answer text with a random subset of region headers in random order.
pub fn answer_text<R: Rng>(rng: &mut R) -> String {
    let mut regions: Vec<&str> = REGIONS
        .iter()
        .copied()
        .filter(|_| rng.gen_bool(0.5))
        .collect();
    regions.shuffle(rng);
    let mut out = String::new();
    if rng.gen_bool(0.3) {
        out.push_str(&sentence(rng, 3));
        out.push_str(". ");
    }
    for r in regions {
        out.push_str(&header_case(rng, r));
        out.push_str(": ");
        let len = rng.gen_range(1..6);
        out.push_str(&sentence(rng, len));
        out.push_str(". ");
    }
    if rng.gen_bool(0.2) {
        // Not a header: no word boundary before "face".
        out.push_str("Interface: x. ");
    }
    let closing = [
        "The image is fake.",
        "The image is real.",
        "It is not fake; it is real.",
        "This isn't authentic.",
        "Hard to say.",
        "It looks genuine, not manipulated.",
    ];
    out.push_str(closing.choose(rng).unwrap());
    out
}

pub fn think_text<R: Rng>(rng: &mut R) -> String {
    let len = rng.gen_range(0..10);
    sentence(rng, len)
}

/// A candidate response, sometimes structurally broken.
pub fn candidate<R: Rng>(rng: &mut R) -> String {
    let think = think_text(rng);
    let answer = answer_text(rng);
    match rng.gen_range(0..8) {
        0 => answer,
        1 => format!("<think>{think}</think>{answer}"),
        2 => format!("<think>{think}<answer>{answer}</answer></think>"),
        3 => format!("<think>{think}</think><answer>{answer}"),
        4 => format!("<answer>{answer}</answer><think>{think}</think>"),
        5 => format!("preamble <think>{think}</think>\n<answer>{answer}</answer> trailing"),
        _ => format!("<think>{think}</think><answer>{answer}</answer>"),
    }
}

pub fn vector<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if v.iter().any(|x| x.abs() > 1e-3) {
            return v;
        }
    }
}
