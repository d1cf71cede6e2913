use std::path::Path;

use thiserror::Error;

/// Every failure a command can report, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn config(key: &str, msg: impl std::fmt::Display) -> Self {
        CliError::Config(format!("{key}: {msg}"))
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }
}

impl From<cftle_core::Error> for CliError {
    fn from(e: cftle_core::Error) -> Self {
        use cftle_core::Error as E;
        match e {
            E::Integration { .. } | E::Rollout { .. } | E::NoValidNodes => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
