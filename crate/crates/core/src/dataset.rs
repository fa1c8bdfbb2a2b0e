//! CoT-Face records stored as JSON Lines.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::response::{self, RegionVocab, Verdict};
use crate::reward;

/// Number of polling iterations kept per record.
pub const POLL_COUNT: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotFaceRecord {
    pub id: String,
    pub image_path: PathBuf,
    pub question: String,
    pub answer: String,
    pub label: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polls: Option<Vec<String>>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
}

/// Reads every record, attaching 1-based line numbers to errors. Blank lines are skipped.
pub fn load(path: impl AsRef<Path>) -> Result<Vec<CotFaceRecord>, DatasetError> {
    let file = File::open(path.as_ref())?;
    read_records(BufReader::new(file))
}

pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<CotFaceRecord>, DatasetError> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.split(b'\n').enumerate() {
        let line_no = idx + 1;
        let bytes = line?;
        let text = std::str::from_utf8(&bytes).map_err(|e| DatasetError::MalformedLine {
            line: line_no,
            message: e.to_string(),
        })?;
        if text.trim().is_empty() {
            continue;
        }
        let record: CotFaceRecord =
            serde_json::from_str(text).map_err(|e| DatasetError::MalformedLine {
                line: line_no,
                message: e.to_string(),
            })?;
        if !seen.insert(record.id.clone()) {
            return Err(DatasetError::DuplicateId {
                line: line_no,
                id: record.id,
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// Writes records as JSON Lines, replacing `path` atomically.
pub fn write(records: &[CotFaceRecord], path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut out = BufWriter::new(tmp.as_file());
        write_records(records, &mut out)?;
        out.flush()?;
    }
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn write_records<W: Write>(records: &[CotFaceRecord], out: &mut W) -> Result<(), DatasetError> {
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    MissingImage,
    UnparseableAnswer,
    LabelContradiction,
    PollsLength,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub id: String,
    pub kind: FindingKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub records: usize,
    pub findings: Vec<Finding>,
    pub counts: BTreeMap<FindingKind, usize>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn count(&self, kind: FindingKind) -> usize {
        self.counts.get(&kind).copied().unwrap_or(0)
    }
}

/// Checks each record. Relative image paths resolve against `base_dir`.
pub fn validate(
    records: &[CotFaceRecord],
    base_dir: Option<&Path>,
    vocab: &RegionVocab,
) -> ValidationReport {
    let mut findings = Vec::new();
    for record in records {
        let mut push = |kind, detail: String| {
            findings.push(Finding {
                id: record.id.clone(),
                kind,
                detail,
            })
        };

        let image = match base_dir {
            Some(base) if record.image_path.is_relative() => base.join(&record.image_path),
            _ => record.image_path.clone(),
        };
        if !image.is_file() {
            push(
                FindingKind::MissingImage,
                format!("{} does not exist", image.display()),
            );
        }

        if let Err(e) = response::parse_response(&record.answer, vocab) {
            push(FindingKind::UnparseableAnswer, e.to_string());
        }

        if let Some(verdict) = reward::classify(&record.answer) {
            if verdict != record.label {
                push(
                    FindingKind::LabelContradiction,
                    format!("answer says {verdict}, label is {}", record.label),
                );
            }
        }

        if let Some(polls) = &record.polls {
            if polls.len() != POLL_COUNT {
                push(
                    FindingKind::PollsLength,
                    format!("{} polls, expected {POLL_COUNT}", polls.len()),
                );
            }
        }
    }
    let mut counts = BTreeMap::new();
    for f in &findings {
        *counts.entry(f.kind).or_insert(0) += 1;
    }
    ValidationReport {
        records: records.len(),
        findings,
        counts,
    }
}
