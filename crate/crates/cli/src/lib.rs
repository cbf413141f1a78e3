//! Experiment runner behind the `birkhoff` binary.
//!
//! [`config`] reads the key/value experiment document and [`commands`]
//! turns it into sweep CSVs, verdict JSON and the auxiliary tables.

pub mod commands;
pub mod config;
pub mod sweep;

use birkhoff_core::NumericError;

/// Failure of a subcommand, mapped onto the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// The orbit and the Fourier oracle disagree beyond tolerance.
    #[error("oracle mismatch: {0}")]
    Mismatch(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 0 is success; 1 I/O, 2 parse, 3 numeric.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Parse(_) => 2,
            CliError::Numeric(_) | CliError::Mismatch(_) => 3,
        }
    }

    /// Prefixes the message with the config field it came from.
    pub fn in_field(self, field: &str) -> Self {
        match self {
            CliError::Parse(m) => CliError::Parse(format!("{field}: {m}")),
            CliError::Numeric(m) => CliError::Numeric(format!("{field}: {m}")),
            other => other,
        }
    }
}

impl From<NumericError> for CliError {
    fn from(e: NumericError) -> Self {
        match e {
            NumericError::Parse(m) => CliError::Parse(m),
            other => CliError::Numeric(other.to_string()),
        }
    }
}
