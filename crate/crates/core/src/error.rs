use thiserror::Error;

/// Errors raised by matrix loading, validation and training.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    Empty,

    #[error("non-square matrix: {rows} rows, row {row} has {cols} columns")]
    NonSquare { rows: usize, row: usize, cols: usize },

    #[error("line {line}, column {column}: non-numeric cell {cell:?}")]
    Parse { line: usize, column: usize, cell: String },

    #[error("ragged data: line {line} has {found} columns, expected {expected}")]
    Ragged { line: usize, found: usize, expected: usize },

    #[error("non-finite entry at ({i}, {j})")]
    NonFinite { i: usize, j: usize },

    #[error("negative dissimilarity {value} at ({i}, {j})")]
    NegativeEntry { i: usize, j: usize, value: f64 },

    #[error("asymmetry {diff:e} at ({i}, {j}) exceeds tolerance")]
    Asymmetric { i: usize, j: usize, diff: f64 },

    #[error("kernel is not positive semidefinite: dissimilarity {value:e} at ({i}, {j})")]
    NotPsd { i: usize, j: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("step {t} out of range for schedule of length {t_max}")]
    StepOutOfRange { t: usize, t_max: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("coefficients sum to {sum}, expected 1")]
    CoefficientSum { sum: f64 },

    #[error("mixing coefficient column {column} has zero total weight")]
    DegenerateColumn { column: usize },

    #[error("power iteration did not converge after {steps} steps")]
    NoConvergence { steps: usize },

    #[error("requested {m} landmarks for {n} data points")]
    LandmarkCount { m: usize, n: usize },

    #[error("dissimilarity is not metric: {violations} sampled triangle violations")]
    NotMetric { violations: usize },

    #[error("{0}")]
    Incompatible(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
