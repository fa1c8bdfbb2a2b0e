//! Structured chain-of-thought responses.
//!
//! A well-formed model response wraps its reasoning in `<think>…</think>`
//! followed by its conclusion in `<answer>…</answer>`. The answer lists
//! findings per facial region using `Name:` headers and states a verdict.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";

const TAGS: [&str; 4] = [THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE];

/// Default region vocabulary, in canonical spelling.
pub const DEFAULT_REGIONS: [&str; 8] = [
    "Overall image",
    "Face",
    "Eyes",
    "Eyebrows",
    "Nose",
    "Mouth",
    "Skin",
    "Neck",
];

pub const FORGERY_WORDS: [&str; 5] = ["fake", "forged", "forgery", "manipulated", "tampered"];
pub const REAL_WORDS: [&str; 3] = ["real", "authentic", "genuine"];
pub const NEGATORS: [&str; 6] = ["not", "no", "never", "nor", "neither", "without"];
pub const NEGATION_WINDOW: usize = 3;

/// Binary classification outcome. "Unknown" is `Option::None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Real,
    Forgery,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Real => "real",
            Verdict::Forgery => "forgery",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Canonical name of a facial region.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RegionKey(String);

impl RegionKey {
    pub fn new(name: impl Into<String>) -> Self {
        RegionKey(name.into())
    }

    pub fn name(&self) -> &str {
        &self.0
    }

    /// ASCII case-insensitive comparison against the canonical form.
    pub fn matches(&self, other: &str) -> bool {
        self.0.eq_ignore_ascii_case(other)
    }
}

impl fmt::Display for RegionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VocabError {
    #[error("region vocabulary is empty")]
    Empty,
    #[error("region name is blank")]
    Blank,
    #[error("duplicate region name {0:?}")]
    Duplicate(String),
}

/// A non-empty set of region names, unique under case folding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionVocab {
    keys: Vec<RegionKey>,
}

impl RegionVocab {
    pub fn new<I, S>(names: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut keys: Vec<RegionKey> = Vec::new();
        for name in names {
            let name: String = name.into();
            let name = name.trim().to_string();
            if name.is_empty() {
                return Err(VocabError::Blank);
            }
            if keys.iter().any(|k| k.matches(&name)) {
                return Err(VocabError::Duplicate(name));
            }
            keys.push(RegionKey(name));
        }
        if keys.is_empty() {
            return Err(VocabError::Empty);
        }
        Ok(RegionVocab { keys })
    }

    pub fn keys(&self) -> &[RegionKey] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

impl Default for RegionVocab {
    fn default() -> Self {
        RegionVocab::new(DEFAULT_REGIONS).expect("default vocabulary is valid")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionFinding {
    pub region: RegionKey,
    pub description: String,
}

/// Parsed model output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotResponse {
    pub think_text: String,
    pub answer_text: String,
    pub regions: Vec<RegionFinding>,
    pub verdict: Option<Verdict>,
}

impl CotResponse {
    /// Builds a response from its two text blocks, deriving regions and verdict.
    pub fn from_blocks(
        think_text: impl Into<String>,
        answer_text: impl Into<String>,
        vocab: &RegionVocab,
    ) -> Self {
        let answer_text = answer_text.into();
        let regions = extract_region_findings(&answer_text, vocab);
        let verdict = extract_verdict(&answer_text);
        CotResponse {
            think_text: think_text.into(),
            answer_text,
            regions,
            verdict,
        }
    }
}

/// Failure to find the think/answer structure. Positions are byte offsets.
#[derive(Debug, Clone, Copy, Error, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParseError {
    #[error("missing or unterminated <think> block at byte {position}")]
    MissingThink { position: usize },
    #[error("missing or unterminated <answer> block at byte {position}")]
    MissingAnswer { position: usize },
    #[error("misnested tag at byte {position}")]
    Misnested { position: usize },
}

impl ParseError {
    pub fn position(&self) -> usize {
        match *self {
            ParseError::MissingThink { position }
            | ParseError::MissingAnswer { position }
            | ParseError::Misnested { position } => position,
        }
    }
}

/// First structural tag inside `text[from..to]`, other than `allowed_close`.
fn stray_tag(text: &str, from: usize, to: usize, allowed_close: &str) -> Option<usize> {
    let body = &text[from..to];
    TAGS.iter()
        .filter(|t| **t != allowed_close)
        .filter_map(|t| body.find(t))
        .min()
        .map(|p| from + p)
}

/// Byte range of a block body.
type Span = (usize, usize);

/// Locates the `(think, answer)` block spans in `raw`.
fn locate_blocks(raw: &str) -> Result<(Span, Span), ParseError> {
    let think_open = raw
        .find(THINK_OPEN)
        .ok_or(ParseError::MissingThink { position: 0 })?;
    let think_start = think_open + THINK_OPEN.len();
    let think_end = match raw[think_start..].find(THINK_CLOSE) {
        Some(p) => think_start + p,
        None => {
            return Err(match stray_tag(raw, think_start, raw.len(), THINK_CLOSE) {
                Some(position) => ParseError::Misnested { position },
                None => ParseError::MissingThink {
                    position: think_open,
                },
            })
        }
    };
    if let Some(position) = stray_tag(raw, think_start, think_end, THINK_CLOSE) {
        return Err(ParseError::Misnested { position });
    }

    let after_think = think_end + THINK_CLOSE.len();
    let answer_open = raw[after_think..]
        .find(ANSWER_OPEN)
        .map(|p| after_think + p)
        .ok_or(ParseError::MissingAnswer {
            position: after_think,
        })?;
    let answer_start = answer_open + ANSWER_OPEN.len();
    let answer_end = match raw[answer_start..].find(ANSWER_CLOSE) {
        Some(p) => answer_start + p,
        None => {
            return Err(
                match stray_tag(raw, answer_start, raw.len(), ANSWER_CLOSE) {
                    Some(position) => ParseError::Misnested { position },
                    None => ParseError::MissingAnswer {
                        position: answer_open,
                    },
                },
            )
        }
    };
    if let Some(position) = stray_tag(raw, answer_start, answer_end, ANSWER_CLOSE) {
        return Err(ParseError::Misnested { position });
    }
    Ok(((think_start, think_end), (answer_start, answer_end)))
}

/// Extracts only the answer block, if the response is well formed.
pub fn answer_block(raw: &str) -> Option<&str> {
    locate_blocks(raw).ok().map(|(_, (s, e))| &raw[s..e])
}

/// Returns true when both tag pairs are present and well nested.
pub fn is_well_formed(raw: &str) -> bool {
    locate_blocks(raw).is_ok()
}

/// Parses the first think block and the first answer block after it.
/// Anything after the first `</answer>` is ignored.
pub fn parse_response(raw: &str, vocab: &RegionVocab) -> Result<CotResponse, ParseError> {
    let ((ts, te), (as_, ae)) = locate_blocks(raw)?;
    Ok(CotResponse::from_blocks(&raw[ts..te], &raw[as_..ae], vocab))
}

pub fn render_response(response: &CotResponse) -> String {
    let mut out =
        String::with_capacity(response.think_text.len() + response.answer_text.len() + 32);
    out.push_str(THINK_OPEN);
    out.push_str(&response.think_text);
    out.push_str(THINK_CLOSE);
    out.push_str(ANSWER_OPEN);
    out.push_str(&response.answer_text);
    out.push_str(ANSWER_CLOSE);
    out
}

/// Lowercased word tokens: maximal runs of alphanumerics and apostrophes.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .map(|t| t.trim_matches('\''))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn is_negator(token: &str) -> bool {
    NEGATORS.contains(&token) || token.ends_with("n't")
}

/// Keyword verdict with a three-token negation window.
///
/// Returns `None` when neither class fires or when both do.
pub fn extract_verdict(answer_text: &str) -> Option<Verdict> {
    let tokens = tokenize(answer_text);
    let mut forgery = false;
    let mut real = false;
    for (i, token) in tokens.iter().enumerate() {
        let is_forgery = FORGERY_WORDS.contains(&token.as_str());
        let is_real = REAL_WORDS.contains(&token.as_str());
        if !is_forgery && !is_real {
            continue;
        }
        let negated = tokens[i.saturating_sub(NEGATION_WINDOW)..i]
            .iter()
            .any(|t| is_negator(t));
        if negated {
            continue;
        }
        forgery |= is_forgery;
        real |= is_real;
    }
    match (forgery, real) {
        (true, false) => Some(Verdict::Forgery),
        (false, true) => Some(Verdict::Real),
        _ => None,
    }
}

/// Byte offset of the first `Name:` header for `key`, on a word boundary.
fn find_header(text: &str, key: &RegionKey) -> Option<usize> {
    let name = key.name().as_bytes();
    let bytes = text.as_bytes();
    let needed = name.len() + 1;
    if bytes.len() < needed {
        return None;
    }
    (0..=bytes.len() - needed).find(|&i| {
        bytes[i..i + name.len()].eq_ignore_ascii_case(name)
            && bytes[i + name.len()] == b':'
            && (i == 0 || !is_word_byte(bytes[i - 1]))
    })
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b >= 0x80
}

/// One finding per vocabulary entry that appears as a `Name:` header, in textual order.
pub fn extract_region_findings(answer_text: &str, vocab: &RegionVocab) -> Vec<RegionFinding> {
    let mut headers: Vec<(usize, &RegionKey)> = vocab
        .keys()
        .iter()
        .filter_map(|k| find_header(answer_text, k).map(|p| (p, k)))
        .collect();
    headers.sort_by_key(|&(p, _)| p);

    let mut findings = Vec::with_capacity(headers.len());
    for (idx, &(pos, key)) in headers.iter().enumerate() {
        let start = pos + key.name().len() + 1;
        let end = headers
            .get(idx + 1)
            .map(|&(p, _)| p)
            .unwrap_or(answer_text.len());
        // A multi-word name can end with another name ("Upper Face" / "Face").
        let description = if end > start {
            answer_text[start..end].trim().to_string()
        } else {
            String::new()
        };
        findings.push(RegionFinding {
            region: key.clone(),
            description,
        });
    }
    findings
}

/// Number of distinct vocabulary entries present as region headers.
pub fn count_region_headers(text: &str, vocab: &RegionVocab) -> usize {
    vocab
        .keys()
        .iter()
        .filter(|k| find_header(text, k).is_some())
        .count()
}
