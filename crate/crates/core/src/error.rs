use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("format error at byte offset {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("non-finite loss {loss} at step {step} (t = {t})")]
    NonFiniteLoss { step: usize, t: usize, loss: f64 },

    #[error("non-finite depth loss {loss} at step {step} (epoch {epoch})")]
    NonFiniteDepthLoss { step: usize, epoch: usize, loss: f64 },

    #[error("non-finite value during generation at t = {t}")]
    NonFiniteSample { t: usize },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("undefined distribution: {0}")]
    UndefinedDistribution(String),

    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn format(offset: u64, reason: impl Into<String>) -> Self {
        Error::Format { offset, reason: reason.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
