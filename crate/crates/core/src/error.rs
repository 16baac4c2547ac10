use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum MfamError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    #[error("length error: {0}")]
    Length(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("window exceeds sequence: window {window} > length {len}")]
    WindowExceedsSequence { window: usize, len: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite loss at epoch {epoch}, bag {bag} (subject {subject}): {detail}")]
    NonFiniteLoss {
        epoch: usize,
        bag: usize,
        subject: String,
        detail: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl MfamError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        MfamError::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        MfamError::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MfamError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        MfamError::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, MfamError>;
