use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation's precondition (shape, range, ordering).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("matrix is not symmetric (max |m - mᵀ| = {0:e})")]
    Asymmetric(f64),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Gradients were already present on a parameter when a new backward pass tried to write them.
    #[error("double gradient accumulation on `{0}`; reset gradients before a second backward pass")]
    DoubleAccumulation(String),

    #[error("missing gradient for parameter `{0}`")]
    MissingGrad(String),

    /// Blocks of a distilled coder must be trained in order N = 1..4.
    #[error("sequencing error: {0}")]
    Sequencing(String),

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("training diverged at step {step} (lr {lr:e}, grad norm {grad_norm:e}): loss is not finite")]
    Diverged { step: usize, lr: f64, grad_norm: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("missing input {}: {msg}", path.display())]
    MissingInput { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}
