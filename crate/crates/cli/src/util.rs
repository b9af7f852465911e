//! Error taxonomy, config file loading, and atomic output writing.

use std::io::Write;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use cognet::align::AlignError;
use cognet::corpus::CorpusError;
use cognet::phmm::PhmmError;
use cognet::pmi::PmiError;

/// Process-level failure classes; the exit code is part of the contract.
#[derive(Debug, Error)]
pub enum AppError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Numerical(String),
}

impl AppError {
    pub fn code(&self) -> i32 {
        match self {
            AppError::Validation(_) => 1,
            AppError::Io(_) => 2,
            AppError::Numerical(_) => 3,
        }
    }
}

impl From<CorpusError> for AppError {
    fn from(e: CorpusError) -> AppError {
        AppError::Validation(e.to_string())
    }
}

impl From<AlignError> for AppError {
    fn from(e: AlignError) -> AppError {
        AppError::Validation(e.to_string())
    }
}

impl From<PmiError> for AppError {
    fn from(e: PmiError) -> AppError {
        match e {
            PmiError::Io(inner) => AppError::Io(inner.to_string()),
            other => AppError::Validation(other.to_string()),
        }
    }
}

impl From<PhmmError> for AppError {
    fn from(e: PhmmError) -> AppError {
        match e {
            PhmmError::Io(inner) => AppError::Io(inner.to_string()),
            PhmmError::NumericalUnderflow { .. } => AppError::Numerical(e.to_string()),
            other => AppError::Validation(other.to_string()),
        }
    }
}

pub fn read_text(path: &Path) -> Result<String, AppError> {
    std::fs::read_to_string(path)
        .map_err(|e| AppError::Io(format!("cannot read {}: {e}", path.display())))
}

/// Write through a temp file in the destination directory, then rename,
/// so interrupted runs never leave half-written outputs behind.
pub fn write_atomic(path: &Path, content: &str) -> Result<(), AppError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or(Path::new(".")))
        .map_err(|e| AppError::Io(format!("cannot stage {}: {e}", path.display())))?;
    tmp.write_all(content.as_bytes())
        .map_err(|e| AppError::Io(format!("cannot write {}: {e}", path.display())))?;
    tmp.persist(path)
        .map_err(|e| AppError::Io(format!("cannot finalize {}: {e}", path.display())))?;
    Ok(())
}

/// Optional TOML settings; any present key fills in for an absent flag
/// (flags > file > built-in defaults).
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub model: Option<String>,
    pub mode: Option<String>,
    pub m: Option<usize>,
    pub alpha: Option<f64>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub threshold: Option<f64>,
    pub gap_open: Option<f64>,
    pub gap_extend: Option<f64>,
    pub pseudocount: Option<f64>,
    pub cluster: Option<String>,
    pub jobs: Option<usize>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
    pub space: Option<String>,
}

pub fn load_config(path: Option<&Path>) -> Result<FileConfig, AppError> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = read_text(p)?;
            toml::from_str(&text)
                .map_err(|e| AppError::Validation(format!("bad config {}: {e}", p.display())))
        }
    }
}

/// Comment block naming the command and every effective setting; goes at
/// the top of each text output so runs are self-describing.
pub fn config_header(command: &str, entries: &[(&str, String)]) -> String {
    let mut out = format!("# cognet {command}\n");
    for (k, v) in entries {
        out.push_str(&format!("# {k}\t{v}\n"));
    }
    out
}
