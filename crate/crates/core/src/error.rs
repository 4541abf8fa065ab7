use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("support of size {size} exceeds the exact-solver cap {cap}")]
    SupportCapExceeded { size: usize, cap: usize },
    #[error("cost matrix contains NaN at ({0}, {1})")]
    NanCost(usize, usize),
    #[error("solver did not converge after {iterations} iterations (achieved gap {gap:e})")]
    NonConvergence { iterations: usize, gap: f64, solution: Option<Box<crate::let_solver::LetSolution>> },
    #[error("zero sigma on a charged atom (side {side}, index {index})")]
    ZeroSigma { side: usize, index: usize },
    #[error("grid: {0}")]
    Grid(String),
    #[error("zero effective sample size")]
    ZeroEffectiveSampleSize,
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}
