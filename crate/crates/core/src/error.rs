use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("capacity error: sequence length {len} exceeds table capacity {capacity}")]
    Capacity { len: usize, capacity: usize },

    #[error("index error: {0}")]
    Index(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },

    #[error("version error: found version {found}, expected {expected}")]
    Version { found: u8, expected: u8 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("provider error after {attempts} attempt(s): {cause}")]
    Provider { attempts: usize, cause: String },

    #[error("storage error: {0}")]
    Storage(String),

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("task error: {0}")]
    Task(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
