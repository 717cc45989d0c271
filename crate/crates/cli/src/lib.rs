//! Experiment runner for `vcl-core`: JSON configs, built-in profiles and the
//! CSV/JSON/binary artifacts each run leaves behind.

pub mod config;
pub mod runner;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Core(vcl_core::Error),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Core(_) | CliError::Io { .. } => 1,
        }
    }

    pub(crate) fn io(context: impl std::fmt::Display, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.to_string(),
            source,
        }
    }
}

impl From<vcl_core::Error> for CliError {
    fn from(e: vcl_core::Error) -> Self {
        match e {
            vcl_core::Error::Idx(_) => CliError::Data(e.to_string()),
            vcl_core::Error::NonFinite(_) => CliError::Numerical(e.to_string()),
            other => CliError::Core(other),
        }
    }
}
