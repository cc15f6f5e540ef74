use thiserror::Error;

use crate::spd::SpdMatrix;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("matrix is not positive definite (min eigenvalue {min_eig:e}, max eigenvalue {max_eig:e})")]
    NotPositiveDefinite { min_eig: f64, max_eig: f64 },

    #[error("matrix is ill-conditioned (condition number {cond:e})")]
    IllConditioned { cond: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    Convergence {
        iterations: usize,
        residual: f64,
        last: Box<SpdMatrix>,
    },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("degenerate training set: {0}")]
    DegenerateTraining(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("window extraction failed: {0}")]
    Extraction(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("data format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            Error::Io(e.into())
        } else {
            Error::Format(e.to_string())
        }
    }
}
