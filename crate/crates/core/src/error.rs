use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("site {0:?} is not in the region")]
    SiteNotInRegion(Vec<i32>),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("conjugate gradient did not converge: relative residual {residual:e} after {iterations} iterations")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("singular conditioning block: {0}")]
    SingularBlock(String),

    #[error("sweep aborted at site {site}: {reason}")]
    SweepFailed { site: usize, reason: String },

    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),

    #[error("degenerate certificate: {0}")]
    Degenerate(String),

    #[error("too few usable points: need {needed}, have {have}")]
    TooFewPoints { needed: usize, have: usize },

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { field, reason: reason.into() }
}
