//! Batch front end for mw-harmonics: JSON experiment configs in, CSV and JSON reports out.

pub mod config;
pub mod output;
pub mod run;
pub mod suite;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Malformed or inconsistent input; exit code 1.
    #[error("input error: {0}")]
    Input(String),
    /// A computed invariant failed; exit code 2.
    #[error("invariant violation: {0}")]
    Invariant(String),
    #[error("io error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) | CliError::Io(_) => 1,
            CliError::Invariant(_) => 2,
        }
    }
}
