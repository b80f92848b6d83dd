use core::fmt;

/// Errors raised by the estimator core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An argument violated a documented precondition.
    InvalidArgument(&'static str),
    /// Not enough observations to compute the requested statistic.
    InsufficientData { needed: u64, got: u64 },
    /// The time reference went backwards.
    NonMonotonicClock { previous_ns: u64, next_ns: u64 },
    /// A reset was requested before the tracker converged.
    NotConverged,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::InsufficientData { needed, got } => {
                write!(f, "insufficient data: need at least {needed} observations, have {got}")
            }
            Error::NonMonotonicClock {
                previous_ns,
                next_ns,
            } => write!(
                f,
                "time reference is not monotonic: read {next_ns} ns after {previous_ns} ns"
            ),
            Error::NotConverged => f.write_str("reset requested before convergence"),
        }
    }
}

impl core::error::Error for Error {}
