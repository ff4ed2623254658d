use thiserror::Error;

use crate::io::FormatError;
use crate::tensor::TensorError;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}: loss is not finite (theta = {theta:?})")]
    TrainingDiverged { epoch: usize, theta: Vec<f64> },

    #[error("degenerate paired test: differences have zero variance")]
    DegenerateTest,

    #[error("correlation undefined: {0} input is constant")]
    UndefinedCorrelation(&'static str),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed document: {0}")]
    Document(String),

    #[error("split {split} (seed {seed}): {source}")]
    Split {
        split: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
