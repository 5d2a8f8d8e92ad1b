//! Library half of the `semsentry` command-line tool.
//!
//! Each pipeline stage is one subcommand; the functions in [`commands`] are
//! what the binary calls and what the integration tests drive directly.

pub mod commands;
pub mod config;

use thiserror::Error;

use semsentry_core::baselines::BaselineError;
use semsentry_core::eval::EvalError;
use semsentry_core::monitor::{BackendError, MonitorError, OracleError, TemplateError};
use semsentry_core::describer::VocabularyError;
use semsentry_core::{GenError, PersistError, ValidationError};

pub use commands::{Cli, Command};
pub use config::{BackendKind, RunConfig};

/// Process exit status for each failure category.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const DATA: i32 = 2;
    pub const BACKEND: i32 = 3;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    /// Malformed or inconsistent input data.
    #[error("{0}")]
    Data(String),
    #[error("backend: {0}")]
    Backend(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Data(_) => exit::DATA,
            CliError::Backend(_) => exit::BACKEND,
        }
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}

data_error!(PersistError, ValidationError, GenError, EvalError, BaselineError, TemplateError, OracleError, VocabularyError);

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        CliError::Backend(e.to_string())
    }
}

impl From<MonitorError> for CliError {
    fn from(e: MonitorError) -> Self {
        match e {
            MonitorError::AllFramesFailed { .. } => CliError::Backend(e.to_string()),
            MonitorError::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}
