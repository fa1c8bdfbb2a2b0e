pub mod dataset;
pub mod eval;
pub mod evolve;
pub mod fvce;

use std::fmt::Display;
use std::path::{Path, PathBuf};

/// Domain failure (bad data, failed pipeline).
pub const EXIT_DOMAIN: u8 = 1;
/// I/O or configuration failure.
pub const EXIT_IO: u8 = 2;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn domain(message: impl Display) -> Self {
        Failure {
            code: EXIT_DOMAIN,
            message: message.to_string(),
        }
    }

    pub fn io(message: impl Display) -> Self {
        Failure {
            code: EXIT_IO,
            message: message.to_string(),
        }
    }
}

pub type CmdResult = Result<(), Failure>;

fn resolve(path: &Path) -> std::io::Result<PathBuf> {
    std::fs::canonicalize(path)
}

fn thread_pool(parallelism: usize) -> Result<rayon::ThreadPool, Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(Failure::io)
}

/// Keeps ids usable as file names.
fn file_stem_for(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes via a temporary file in the same directory, then renames.
fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    use std::io::Write;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
