use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] ratescope_core::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("sampling period calibration is unstable; monitoring would not yield usable rates")]
    UnstableCalibration,
    #[error("line {line}: {message}")]
    Trace { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("worker thread panicked: {0}")]
    Worker(&'static str),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
