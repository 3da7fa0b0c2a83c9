use std::path::PathBuf;

/// Errors produced by the simulation library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("index {index} is out of range (available: {available})")]
    OutOfRange { index: usize, available: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("integral of {what} did not converge (estimate {estimate:e}, error {error:e})")]
    Integrability {
        what: String,
        estimate: f64,
        error: f64,
    },

    #[error("tail table exhausted at m = {m_max} (epsilon = {epsilon:e}, threshold = {threshold:e})")]
    NeedsExtension {
        m_max: usize,
        epsilon: f64,
        threshold: f64,
    },

    #[error("noise covers annuli up to {available} and horizon {horizon}, scheme needs {needed} up to {needed_horizon}")]
    Coverage {
        needed: usize,
        available: usize,
        needed_horizon: f64,
        horizon: f64,
    },

    #[error("sampler construction failed: {0}")]
    Sampler(String),

    #[error("I + grad_x c is singular at jump (k = {k}, i = {i}) at time {time}")]
    NonInvertible { k: usize, i: usize, time: f64 },

    #[error("super-kernel order {0} is too high (maximum 12)")]
    OrderTooHigh(usize),

    #[error("insufficient data: got {got} points, need at least {need}")]
    InsufficientData { got: usize, need: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("config file {path}: {message}")]
    ConfigFile { path: PathBuf, message: String },

    #[error("malformed noise dump: {0}")]
    Format(String),

    #[error("{} path(s) failed; first: path {}: {}", .0.len(), .0[0].0, .0[0].1)]
    Paths(Vec<(u64, Error)>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by user-supplied configuration rather than
    /// a numerical failure.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::ConfigFile { .. } | Error::InvalidArgument(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
