use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("insufficient context: need {required} frames, have {available}")]
    Context { required: usize, available: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("batch needs at least 2 pairs, got {0}")]
    BatchSize(usize),

    #[error("unknown id: {0}")]
    Lookup(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("track {0} is too short")]
    TooShort(String),

    #[error("non-finite loss at step {step}")]
    Divergence { step: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("malformed tensor file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav error on {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
