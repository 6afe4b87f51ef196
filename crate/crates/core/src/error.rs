use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(
        "solver did not converge (residual norm {residual_norm:e} after {iterations} iterations)"
    )]
    NoConvergence {
        best: Vec<f64>,
        residual_norm: f64,
        iterations: usize,
    },

    #[error("variable `{name}` (row {row}) has zero variance")]
    DegenerateVariable { row: usize, name: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("trivial solution: residual encoder weights and latent means vanish; retrain with a norm constraint on the residual rows")]
    TrivialSolution,

    #[error("nothing to extract: no residual latent variables")]
    NothingToExtract,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
