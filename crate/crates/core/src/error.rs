use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("malformed NIfTI file: {0}")]
    Format(String),

    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    /// A cell of the produced map has a non-positive Jacobian determinant.
    #[error("map folds: cell {cell:?} has Jacobian determinant {value:e}")]
    Folding { cell: Vec<usize>, value: f64 },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("line search stalled at iteration {iteration}: loss {loss:e}, gradient norm {grad_norm:e}")]
    Stall {
        iteration: usize,
        loss: f64,
        grad_norm: f64,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
