use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("variable does not belong to this tape")]
    ForeignVar,

    #[error("non-finite gradient at optimizer step {step}")]
    NonFiniteGradient { step: u64 },

    #[error("training diverged ({phase}) at epoch {epoch}: loss = {loss}")]
    Divergence {
        phase: &'static str,
        epoch: usize,
        loss: f64,
    },

    #[error("need at least {needed} stages of history, have {have}")]
    InsufficientHistory { needed: usize, have: usize },

    #[error("stage ordering error: expected stage {expected}, got {got}")]
    StageOrder { expected: usize, got: usize },

    #[error("spec mismatch: expected {expected}, found {found}")]
    SpecMismatch { expected: String, found: String },

    #[error("stage {stage}: {message}")]
    Data { stage: usize, message: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("success ratio undefined: no future stages")]
    UndefinedRatio,

    #[error("probabilities sum to {0}, expected 1")]
    NotNormalized(f64),

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by numerical blow-up during training.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. } | Error::NonFiniteGradient { .. }
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
