use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value at {what} (index {index}): {value}")]
    NonFinite {
        what: &'static str,
        index: usize,
        value: f64,
    },

    #[error("size mismatch: expected {expected} entries, got {got}")]
    SizeMismatch { expected: usize, got: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("configuration invalid:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    #[error("quadrature did not converge (estimated residual {residual:e})")]
    Quadrature { residual: f64 },

    #[error("time step underflow: dt = {dt:e} s")]
    TimeStepUnderflow { dt: f64 },

    #[error("positivity failure at t = {time}: step rejected {rejections} times (min density {min_rho:e})")]
    Positivity {
        time: f64,
        rejections: usize,
        min_rho: f64,
        rho: Vec<f64>,
        u: Vec<f64>,
    },

    #[error("eigen-iteration did not converge after {iterations} steps")]
    EigenIteration { iterations: usize },

    #[error("family error: {0}")]
    Family(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
