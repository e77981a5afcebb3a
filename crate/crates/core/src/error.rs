//! Crate-wide error type.

use std::path::{Path, PathBuf};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("annotation parse error at {path} (line {line}, column {column}): {message}")]
    AnnotationParse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("missing annotation file for image {image}: expected {path}")]
    MissingAnnotation { image: String, path: PathBuf },

    #[error("missing image file {image} referenced by {annotation}")]
    MissingImage { image: PathBuf, annotation: PathBuf },

    #[error("image decode error at {path}: {source}")]
    ImageDecode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("no samples found under {path}")]
    NoSamples { path: PathBuf },

    #[error("invalid parameter {name}: {message}")]
    Parameter { name: String, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown model family '{0}'")]
    UnknownFamily(String),

    #[error("external model family requires a registered plug-in constructor")]
    ExternalModel,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("checkpoint format error at {path}: {message}")]
    CheckpointFormat { path: PathBuf, message: String },

    #[error("density cache format error at {path}: {message}")]
    CacheFormat { path: PathBuf, message: String },

    #[error("scoring failed: non-finite loss at step {step}")]
    ScoringDiverged { step: usize },

    #[error("training aborted: non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("reference not found: {0}")]
    NotFound(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn json(path: &Path, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn parameter(name: &str, message: impl Into<String>) -> Self {
        Error::Parameter {
            name: name.to_string(),
            message: message.into(),
        }
    }
}
