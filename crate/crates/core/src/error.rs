use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to parse {path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error("invalid metadata for `{id}`: {reason}")]
    Metadata { id: String, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("render error: {0}")]
    Render(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("no loadable models found in {0}")]
    EmptyCorpus(PathBuf),

    #[error("depth image has no valid pixels")]
    EmptyDepth,

    #[error("point cloud has no real points")]
    DegenerateCloud,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty set: {0}")]
    EmptySet(String),

    #[error("mask selects no pixels")]
    EmptyMask,

    #[error("no samples in either dataset")]
    EmptyDataset,

    #[error("non-finite loss at step {step} ({source_tag}): alde={alde}, cd={cd:?}")]
    NonFiniteLoss {
        step: usize,
        source_tag: String,
        alde: f64,
        cd: Option<f64>,
    },

    #[error("checkpoint layer `{layer}` does not match the model: {reason}")]
    CheckpointShape { layer: String, reason: String },

    #[error("unreadable checkpoint: {0}")]
    Version(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Error::Image {
            path: path.into(),
            reason: err.to_string(),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping any context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}
