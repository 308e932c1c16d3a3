use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The normalizing series diverges (geometric case with rate >= 1).
    #[error("normalizing series diverges at log_lambda = {log_lambda}, nu = {nu}")]
    DivergentSeries { log_lambda: f64, nu: f64 },

    #[error("series not converged after {max_terms} terms")]
    Truncated { max_terms: usize },

    #[error("could not bracket the rate for mu = {mu}, nu = {nu}")]
    RateBracket { mu: f64, nu: f64 },

    #[error("linear predictor {eta} exceeds cap {cap}")]
    LinearPredictorOverflow { eta: f64, cap: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("design matrix is rank deficient (rank {rank} < {p} columns)")]
    RankDeficient { rank: usize, p: usize },

    #[error("series has zero variance")]
    ZeroVariance,

    #[error("series is empty")]
    EmptySeries,

    #[error("series needs at least {needed} values, got {found}")]
    TooShort { needed: usize, found: usize },

    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("log-posterior is not finite at the initial state")]
    InfeasibleInit,
}
