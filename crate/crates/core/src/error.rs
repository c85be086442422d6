use thiserror::Error;

/// Failure modes shared by every solver in the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("rejected input: {0}")]
    InvalidInput(String),
    #[error("rejected config: {0}")]
    InvalidConfig(String),
    #[error("guard violated at t = {time}: {detail}")]
    Guard { time: f64, detail: String },
    #[error("iteration budget exhausted: {detail}")]
    Budget { detail: String, history: Vec<f64> },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub fn guard(time: f64, detail: impl Into<String>) -> Self {
        Error::Guard {
            time,
            detail: detail.into(),
        }
    }

    /// Re-stamp a guard violation with the time at which it happened.
    pub fn at_time(self, t: f64) -> Self {
        match self {
            Error::Guard { detail, .. } => Error::Guard { time: t, detail },
            other => other,
        }
    }
}
