use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("axis {axis} out of range for dimension {dim}")]
    AxisOutOfRange { axis: usize, dim: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("permutation on vertical line {line:?} is not injective")]
    NotInjective { line: Vec<i32> },

    #[error("permutation on vertical line {line:?} maps {x} outside the sampled sites")]
    PermutationOutOfDomain { line: Vec<i32>, x: i32 },

    #[error("rejection budget exhausted after {attempts} attempts")]
    RejectionBudgetExhausted { attempts: u64 },

    #[error("cut time truncated: no cut found within the window")]
    TruncatedCut,

    #[error("truncation rate {rate:.4} exceeds threshold {threshold:.4}")]
    TruncationRateExceeded { rate: f64, threshold: f64 },

    #[error("only {found} segments found, need at least {required}")]
    TooFewSegments { found: usize, required: usize },

    #[error("all importance weights are zero")]
    AllWeightsZero,

    #[error("need at least {required} samples, got {got}")]
    TooFewSamples { required: usize, got: usize },

    #[error("effective sample size {ess:.1} below threshold {threshold:.1}")]
    LowEffectiveSampleSize { ess: f64, threshold: f64 },

    #[error("instance too large: {0}")]
    InstanceTooLarge(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
