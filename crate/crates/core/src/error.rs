use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by model construction, the approximating chain, the solver
/// and the batch front-end.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("grid bound {upper} is not an integer multiple of spacing {h}")]
    NonIntegralGrid { h: f64, upper: f64 },

    #[error("grid would hold {states} states, above the cap of {cap}")]
    GridTooLarge { states: u128, cap: u128 },

    #[error("negative Q_h = {value} at state {state:?}; the covariance is not diagonally dominant there")]
    NegativeQ { state: Vec<f64>, value: f64 },

    #[error("transition probability {value} at state {state:?} lies outside [0, 1]")]
    InvalidProbability { state: Vec<f64>, value: f64 },

    #[error("action {action} leaves the grid at state {state:?}")]
    OutOfGrid { state: Vec<f64>, action: i32 },

    #[error("no admissible action at state {state:?}")]
    EmptyActionSet { state: Vec<f64> },

    #[error("policy kept acting for more than {limit} increments in one step at {state:?}")]
    RunawayPolicy { state: Vec<f64>, limit: usize },

    #[error("model assumption `{check}` fails at {state:?}")]
    Assumption { check: &'static str, state: Vec<f64> },

    #[error("scenario rejected: {0}")]
    Scenario(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
