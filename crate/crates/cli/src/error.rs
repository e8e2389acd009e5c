use serde::Serialize;
use thiserror::Error;

/// Failure of a CLI command, mapped to an exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Configuration does not match the schema.
    #[error("{0}")]
    Schema(String),
    #[error("cannot write output: {0}")]
    Output(String),
    #[error(transparent)]
    Compute(#[from] trapsim::TrapError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Output(_) | CliError::Compute(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Schema(_) => "schema",
            CliError::Output(_) => "output",
            CliError::Compute(_) => "computation",
        }
    }

    pub fn report(&self) -> ErrorReport {
        ErrorReport { kind: self.kind().into(), message: self.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

/// Structured error recorded in `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorReport {
    pub kind: String,
    pub message: String,
}
