use geomint::Error;
use thiserror::Error as ThisError;

/// Failure classes, one per exit code.
#[derive(Debug, ThisError)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn io(msg: impl Into<String>) -> Self {
        CliError::Io(msg.into())
    }

    pub fn code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    pub fn context(self, prefix: &str) -> Self {
        match self {
            CliError::Validation(m) => CliError::Validation(format!("{prefix}: {m}")),
            CliError::Numerical(m) => CliError::Numerical(format!("{prefix}: {m}")),
            CliError::Io(m) => CliError::Io(format!("{prefix}: {m}")),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse(_)
            | Error::InvalidSystem(_)
            | Error::Dimension { .. }
            | Error::ConstraintViolation { .. }
            | Error::InvalidStep(_)
            | Error::MissingColumn(_)
            | Error::NonMonotonicTime { .. } => CliError::Validation(e.to_string()),
            Error::Eval(_)
            | Error::NotSpd { .. }
            | Error::Regularity { .. }
            | Error::Pole { .. }
            | Error::NonFinite { .. }
            | Error::SingularMultiplier
            | Error::Newton(_) => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
