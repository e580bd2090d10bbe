//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CiderError>;

#[derive(Error, Debug)]
pub enum CiderError {
    /// Invalid configuration value (even kernel dims, bad levels, budget overrun...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Invalid input data (NaN pixels, negative intensities, empty datasets...).
    #[error("input error: {0}")]
    Input(String),

    /// Incompatible tensor shapes, reported with both operand shapes.
    #[error("shape error in {op}: {lhs} vs {rhs}")]
    Shape {
        op: &'static str,
        lhs: String,
        rhs: String,
    },

    /// Malformed file (bad magic, truncated payload, unparsable text).
    #[error("format error: {0}")]
    Format(String),

    /// Loaded weights do not match the declared architecture.
    #[error("architecture error: {0}")]
    Architecture(String),

    /// Violated internal contract (non-scalar loss, inconsistent pyramid...).
    #[error("contract error: {0}")]
    Contract(String),

    /// Optimization diverged; carries a snapshot of the loss terms at failure.
    #[error(
        "non-finite loss at iteration {iteration}: ssim={ssim_term} hessian={hessian_term} sparsity={sparsity_term}"
    )]
    NonFiniteLoss {
        iteration: usize,
        ssim_term: f64,
        hessian_term: f64,
        sparsity_term: f64,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CiderError {
    pub fn shape(op: &'static str, lhs: impl std::fmt::Debug, rhs: impl std::fmt::Debug) -> Self {
        CiderError::Shape {
            op,
            lhs: format!("{lhs:?}"),
            rhs: format!("{rhs:?}"),
        }
    }

    /// Process exit code for the CLI: 1 for user/input problems, 2 for internal ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            CiderError::Config(_)
            | CiderError::Input(_)
            | CiderError::Format(_)
            | CiderError::Architecture(_)
            | CiderError::Io(_) => 1,
            CiderError::Shape { .. } | CiderError::Contract(_) | CiderError::NonFiniteLoss { .. } => 2,
        }
    }
}
