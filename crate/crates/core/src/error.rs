use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("svd did not converge after {iterations} iterations")]
    SvdNoConvergence { iterations: usize },

    #[error("ill-posed completion: column {column} has no observed entries")]
    IllPosed { column: usize },

    #[error("invalid warp: {0}")]
    InvalidWarp(String),

    #[error("degenerate motion: {0}")]
    DegenerateMotion(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("F-measure undefined: ground truth has no positives")]
    UndefinedMeasure,
}

pub type Result<T> = std::result::Result<T, Error>;
