use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at {layer}: expected {expected:?}, got {actual:?}")]
    Shape {
        layer: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid model: {0}")]
    Model(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite {what} at layer {layer:?}, batch {batch}")]
    NonFinite {
        what: &'static str,
        layer: Option<usize>,
        batch: usize,
    },

    #[error("layer {0} has no spatial extent")]
    NotSpatial(usize),

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("image {image_id}: {reason}")]
    Record { image_id: String, reason: String },

    #[error("{side} token list has no in-vocabulary tokens")]
    OutOfVocabulary { side: &'static str },

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("annotation rejected: {0}")]
    Validation(String),

    #[error("unknown unit {unit_id}; valid ids: {valid}")]
    UnknownUnit { unit_id: usize, valid: String },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
