use alloc::string::String;

/// Failures reported by the estimation pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("truncation interval [{lo}, {hi}] has no probability mass")]
    DegenerateTruncation { lo: f64, hi: f64 },

    #[error("hessian has no nonzero eigenvalue")]
    DegenerateHessian,

    #[error("leading bias constant is zero; optimal bandwidth is unbounded")]
    DegenerateBias,

    #[error("no logged action carries weight at the target actions (weight sum {weight_sum})")]
    EmptyOverlap { weight_sum: f64 },

    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("reward model is not fitted")]
    NotFitted,

    #[error("non-finite second difference at ({row}, {col})")]
    NonFiniteHessian { row: usize, col: usize },

    #[error("negative diagonal {value} at index {index} before square root")]
    InternalConsistency { index: usize, value: f64 },

    #[error("bandwidth selection failed at every grid point")]
    SelectionFailed,
}

pub type Result<T> = core::result::Result<T, Error>;
