use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("field is not even: max |f(x) - f(-x)| = {deviation:e} (allowed {allowed:e})")]
    Symmetry { deviation: f64, allowed: f64 },

    #[error("operator requires a zero-mean field, got mean {mean:e}")]
    NonzeroMean { mean: f64 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("conformal gradient degenerates: min of (1 + C_h(v'))^2 + v'^2 is {min:e}")]
    Degeneracy { min: f64 },

    #[error("surface height is not positive (min v = {min:e})")]
    Positivity { min: f64 },

    #[error("transversality vectors are numerically dependent (det = {det:e})")]
    Transversality { det: f64 },

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    Iteration { iterations: usize, residual: f64 },

    #[error("ill-conditioned linear algebra: {0}")]
    Conditioning(String),

    #[error("kernel at mode {mode} is {dimension}-dimensional; use the two-mode solver")]
    Resonance { mode: usize, dimension: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("index {index} out of range (branch has {len} points)")]
    Range { index: usize, len: usize },

    #[error("parse error in {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parameter(_) | Error::Range { .. } | Error::Parse { .. } => 2,
            Error::Io { .. } => 4,
            _ => 3,
        }
    }
}
