use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("feature vector {index} is not normalized (norm^2 = {norm_sq})")]
    NotNormalized { index: usize, norm_sq: f64 },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("matrix is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),

    #[error("matrix is not positive semidefinite (smallest eigenvalue {0:e})")]
    NotPositive(f64),

    #[error("degenerate dataset: total variance is zero")]
    ZeroVariance,

    #[error("model was built without a mean vector")]
    MissingMean,

    #[error("probe does not carry a full density matrix")]
    MissingProbeMatrix,

    #[error("degenerate input: centered norm is zero, normalized score undefined")]
    DegenerateInput,

    #[error("empty postselection branch (acceptance probability {0:e})")]
    EmptyBranch(f64),

    #[error("{method} did not converge within {iterations} iterations (|gradient| = {gradient:e})")]
    NoConvergence {
        method: &'static str,
        iterations: usize,
        gradient: f64,
    },

    #[error("bisection bracket could not be expanded to straddle the target after {0} doublings")]
    BracketExpansion(usize),

    #[error("thresholds are not strictly decreasing at index {0}")]
    NonMonotone(usize),

    #[error("infeasible target: {0}")]
    Infeasible(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
