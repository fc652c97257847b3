//! CLI error taxonomy and exit codes: 2 config, 3 data, 4 numeric, 1 other.

use sgmt_core::Error as CoreError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(err: CoreError) -> Self {
        match &err {
            CoreError::InvalidConfig(_) | CoreError::InvalidSpec(_) => {
                CliError::Config(err.to_string())
            }
            CoreError::NonFiniteLoss { .. }
            | CoreError::NonFinite(_)
            | CoreError::NonFiniteGradient(_) => CliError::Numeric(err.to_string()),
            _ => CliError::Data(err.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Data(err.to_string())
    }
}
