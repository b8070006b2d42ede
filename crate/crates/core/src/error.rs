//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("{0}")]
    InvalidInput(String),

    #[error("missing column: {0}")]
    MissingColumn(String),

    #[error("non-numeric cell at row {row}, column {column}")]
    NonNumericCell { row: usize, column: String },

    #[error("{0}")]
    InvalidData(String),

    #[error("degenerate diagonal")]
    DegenerateDiagonal,

    #[error("no variation in treatment")]
    NoTreatmentVariation,

    #[error("linear program infeasible: {0}")]
    LpInfeasible(String),

    #[error("linear program unbounded")]
    LpUnbounded,

    #[error("singular system: {0}")]
    Singular(String),

    #[error("external prediction missing for row {row}, point '{tag}'")]
    ExternalPredictionMissing { row: usize, tag: String },

    #[error("{0}")]
    Numerical(String),
}
