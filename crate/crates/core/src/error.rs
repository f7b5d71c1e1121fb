use thiserror::Error;

/// Errors raised by the numerical routines and the experiment runner.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument is outside the set where the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two objects that must share a shape (grid, dimension) do not.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A simulation produced an unusable value (singular volatility,
    /// non-finite payoff, overflowing exponential).
    #[error("simulation error: {0}")]
    Simulation(String),

    /// An iterate of the fixed-point solver left the domain of the
    /// nonlinearity by more than the configured tolerance.
    #[error("iterate left domain {domain} at iteration {iteration}, t = {time}: value {value}")]
    DomainEscape {
        domain: String,
        iteration: usize,
        time: f64,
        value: f64,
    },

    /// Invalid configuration or malformed input.
    #[error("validation error: {0}")]
    Validation(String),

    /// Expression grammar failure.
    #[error("parse error at {position}: {message}")]
    Parse { position: usize, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn simulation(msg: impl Into<String>) -> Self {
        Error::Simulation(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// True for errors caused by user input rather than numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_) | Error::Parse { .. } | Error::Io(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
