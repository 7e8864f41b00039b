//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inconsistent or invalid configuration (dimensions, enum labels, grids).
    #[error("configuration error: {0}")]
    Config(String),

    /// Sample too short for the requested lags / horizons.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Malformed input data (ragged CSV, missing or non-numeric cells).
    #[error("data error: {0}")]
    Data(String),

    /// A moment evaluation produced a non-finite value.
    #[error("non-finite moment evaluation at observation {t}: {detail}")]
    NumericalEval { t: usize, detail: String },

    /// The unpenalized dual objective increases without bound.
    #[error("unbounded dual direction: {0}")]
    UnboundedDirection(String),

    /// An iterative solver stopped without meeting its tolerance.
    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    /// The projection program is infeasible at the requested tolerance.
    #[error(
        "projection infeasible at varsigma={varsigma:.6e}; minimal feasible varsigma is {min_feasible:.6e}"
    )]
    InfeasibleProjection { varsigma: f64, min_feasible: f64 },

    /// Every tuning pair failed; carries one message per pair.
    #[error("all tuning candidates failed:\n{}", .0.join("\n"))]
    AllTuningFailed(Vec<String>),

    /// Degenerate input detected by a decomposition (zero row, singular block).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}
