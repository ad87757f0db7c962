use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = ReachError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ReachError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("constraint Jacobian is singular: {0}")]
    Singularity(String),

    #[error("retraction did not converge after {iterations} iterations (residual {residual:.3e})")]
    RetractionFailure { iterations: usize, residual: f64 },

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(
        "training aborted at step {step}: non-finite loss (L1 = {l1}, L2 = {l2}, grad norm = {grad_norm})"
    )]
    NonFiniteLoss {
        step: usize,
        l1: f64,
        l2: f64,
        grad_norm: f64,
    },

    #[error("model file {path}: {message}")]
    Model { path: PathBuf, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl ReachError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        ReachError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        ReachError::InvalidInput(message.into())
    }
}
