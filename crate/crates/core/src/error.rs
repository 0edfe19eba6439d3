use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid space shape: {0}")]
    InvalidShape(String),

    #[error("shape mismatch: expected length {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("operation requires {required} but the state lives on {found}")]
    WrongModel {
        required: &'static str,
        found: &'static str,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("Krylov step did not converge: error estimate {estimate:.3e} > tol {tol:.3e} at dimension {dim}")]
    KrylovNotConverged { estimate: f64, tol: f64, dim: usize },

    #[error("Lanczos ground state did not converge after {iterations} iterations (best residual {residual:.3e})")]
    LanczosNotConverged { iterations: usize, residual: f64 },

    #[error("Fock cutoff {cutoff} too small for coherent amplitude {beta}: norm deficit {deficit:.3e}")]
    CutoffTooSmall { cutoff: usize, beta: f64, deficit: f64 },

    #[error("dense reference limited to N <= {max}, got {n}")]
    OversizedDense { n: usize, max: usize },

    #[error("pump calibration failed after {probes} probes: {history}")]
    Calibration { probes: usize, history: String },

    #[error("config error at `{key}` (line {line}): {message}")]
    Config { key: String, line: usize, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable class used by the CLI on failure.
    pub fn class(&self) -> &'static str {
        match self {
            Error::InvalidShape(_)
            | Error::ShapeMismatch { .. }
            | Error::WrongModel { .. }
            | Error::InvalidParameter { .. } => "invalid-input",
            Error::KrylovNotConverged { .. }
            | Error::LanczosNotConverged { .. }
            | Error::CutoffTooSmall { .. }
            | Error::Calibration { .. } => "numerical",
            Error::OversizedDense { .. } => "oversized",
            Error::Config { .. } => "config",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
