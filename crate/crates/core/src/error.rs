use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum DcsmError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("empty data: {0}")]
    EmptyData(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("prior MLE requires ≥1 event")]
    NoEvents,
    #[error("no sign change in shape bracket: g(lo) = {g_lo:e}, g(hi) = {g_hi:e}")]
    NoBracket { g_lo: f64, g_hi: f64 },
    #[error("no comparable pairs")]
    NoComparablePairs,
    #[error("non-finite loss at epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error("model format error: {0}")]
    Format(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DcsmError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DcsmError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = DcsmError> = std::result::Result<T, E>;
