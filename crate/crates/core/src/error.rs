use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("inconsistent loan record: {0}")]
    Inconsistent(String),

    #[error("invalid network spec: {0}")]
    Spec(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("training failed at epoch {epoch}, step {step}: {reason}")]
    Training {
        epoch: usize,
        step: usize,
        reason: String,
    },

    #[error("invalid distribution: {0}")]
    Distribution(String),

    #[error("weibull fit failed: {0}")]
    WeibullFit(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: row {row}: {reason}")]
    Row {
        path: PathBuf,
        row: usize,
        reason: String,
    },

    #[error("model file: {0}")]
    Format(String),

    #[error("experiment stage `{stage}`: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Wrap an error with the experiment stage that produced it.
    pub fn at_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}
