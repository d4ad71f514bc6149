use thiserror::Error;

/// Errors produced by scenario construction, matrix operations, sampling,
/// and the bound checks.
#[derive(Debug, Error)]
pub enum Error {
    /// A matrix contains NaN or infinite entries.
    #[error("{what} has non-finite entries")]
    InvalidMatrix { what: String },

    /// A matrix that must be strictly positive definite is not.
    #[error("{what} is not positive definite (lambda_min = {lambda_min:e})")]
    NotPositiveDefinite { what: String, lambda_min: f64 },

    /// A matrix that must be positive semi-definite is not.
    #[error("{what} is not positive semi-definite (lambda_min = {lambda_min:e})")]
    NotPsd { what: String, lambda_min: f64 },

    /// Dimensions of two quantities do not conform.
    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    ShapeError {
        what: String,
        expected: String,
        got: String,
    },

    /// The completion sampler kept drawing numerically singular Gram blocks.
    #[error(
        "completion sampling failed after {attempts} attempts (degenerate Gram block {block})"
    )]
    SamplingFailure { block: usize, attempts: usize },

    /// A scenario violates one of its structural invariants.
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    /// A joint covariance does not qualify as a completion of the blocks.
    #[error("invalid completion: {0}")]
    InvalidCompletion(String),

    /// An operation needing the quadratic mean matrix was called without one.
    #[error("scenario has no quadratic mean matrix")]
    MissingQuadraticMean,

    /// The quadratic intrinsic-variance model left its validity region.
    #[error("conditional variance {variance:e} is negative at phi = {phi:?}")]
    NegativeConditionalVariance { phi: Vec<f64>, variance: f64 },

    /// A proven bound was violated numerically. Signals an implementation
    /// bug, not user error.
    #[error("bound violated on completion {index}: {what} ({lhs:e} > {rhs:e})")]
    BoundViolation {
        index: usize,
        what: String,
        lhs: f64,
        rhs: f64,
    },

    /// Two algebraically equal routes disagreed beyond tolerance.
    #[error("consistency check failed: {what} ({lhs:e} vs {rhs:e})")]
    ConsistencyViolation { what: String, lhs: f64, rhs: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
