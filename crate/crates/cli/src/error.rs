use gdfm::{ErrorClass, GdfmError};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Core(#[from] GdfmError),
}

impl CliError {
    pub fn class(&self) -> ErrorClass {
        match self {
            CliError::Config(_) => ErrorClass::Config,
            CliError::Data(_) => ErrorClass::Data,
            CliError::Core(e) => e.class(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numerical => 4,
        }
    }

    /// Machine-readable form written to stderr and `error.json`.
    pub fn record(&self) -> ErrorRecord {
        let class = match self.class() {
            ErrorClass::Config => "config",
            ErrorClass::Data => "data",
            ErrorClass::Numerical => "numerical",
        };
        ErrorRecord {
            class,
            exit_code: self.exit_code(),
            message: self.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(GdfmError::Io(e))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(GdfmError::Csv(e))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorRecord {
    pub class: &'static str,
    pub exit_code: i32,
    pub message: String,
}

pub type CliResult<T> = std::result::Result<T, CliError>;
