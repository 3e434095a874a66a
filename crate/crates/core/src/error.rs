use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("time step {0} is not positive")]
    StepTooSmall(f64),
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("{what} did not converge (residual {residual:.3e})")]
    NonConvergence { what: &'static str, residual: f64 },
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("unknown system '{0}'")]
    UnknownSystem(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::NonConvergence { .. } => 2,
            Error::InvariantViolation(_) => 3,
            Error::InvalidParameter(_)
            | Error::UnknownSystem(_)
            | Error::StepTooSmall(_)
            | Error::GeometryMismatch(_) => 4,
            _ => 1,
        }
    }
}
