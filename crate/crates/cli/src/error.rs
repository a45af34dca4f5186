use std::path::PathBuf;

use thiserror::Error;

/// Failures mapped to process exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("missing inputs:\n{}", list(.0))]
    MissingInputs(Vec<PathBuf>),
    #[error("{0}")]
    Other(String),
}

fn list(paths: &[PathBuf]) -> String {
    paths.iter().map(|p| format!("  {}", p.display())).collect::<Vec<_>>().join("\n")
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::NonFinite(_) => 3,
            CliError::MissingInputs(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl From<mgproj::Error> for CliError {
    fn from(e: mgproj::Error) -> Self {
        match e {
            mgproj::Error::Config(m) => CliError::Config(m),
            mgproj::Error::NonFinite(m) => CliError::NonFinite(m),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
