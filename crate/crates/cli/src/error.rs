use thiserror::Error;

/// Failure classes, mapped to exit codes 1 and 2.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn validation(msg: impl std::fmt::Display) -> Self {
        CliError::Validation(msg.to_string())
    }

    pub fn runtime(msg: impl std::fmt::Display) -> Self {
        CliError::Runtime(msg.to_string())
    }
}

impl From<dpsmc::Error> for CliError {
    fn from(e: dpsmc::Error) -> Self {
        use dpsmc::Error::*;
        match e {
            InvalidParameter { .. } | DimensionMismatch { .. } | Parse { .. } | UnknownLabel(_) | Json(_) | NoExactSampler(_) | EmptySamples => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
