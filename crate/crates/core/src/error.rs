use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid argument to {op}: {msg}")]
    Invalid { op: &'static str, msg: String },

    #[error("{op}: every entry of a slice along the reduction axis is masked")]
    UndefinedSlice { op: &'static str },

    #[error("{op}: position {value} outside [0, {period})")]
    OutOfRange {
        op: &'static str,
        value: f64,
        period: usize,
    },

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("sequence too short: {kept} frames survive, at least {needed} required")]
    TooShort { kept: usize, needed: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("ingestion error for sample {sample}: {msg}")]
    Ingest { sample: String, msg: String },

    #[error("malformed tensor file {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("checkpoint not found: {0}")]
    CheckpointNotFound(PathBuf),

    #[error("training diverged at step {step}: {msg}")]
    Diverged { step: usize, msg: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Invalid {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
