use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A triad refers to a mode outside `1..=n` or repeats an index.
    #[error("malformed triad {triad}: {reason}")]
    Structure { triad: String, reason: String },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A state left the domain an operation is defined on (e.g. E < 0).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite state at t = {t}: {state:?}")]
    NonFinite { t: f64, state: Vec<f64> },

    #[error("blow-up at t = {t}: |component| exceeded {bound:e}, state = {state:?}")]
    BlowUp { t: f64, bound: f64, state: Vec<f64> },

    #[error("relative energy drift {drift:e} at t = {t} exceeds {tolerance:e}; reduce dt")]
    EnergyDrift { t: f64, drift: f64, tolerance: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("zero variance: cannot normalize")]
    ZeroVariance,

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// Too many trajectories of an ensemble aborted.
    #[error("ensemble failed: {0}")]
    Ensemble(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::BlowUp { .. }
                | Error::EnergyDrift { .. }
                | Error::ZeroVariance
                | Error::Domain(_)
                | Error::Ensemble(_)
        )
    }
}
