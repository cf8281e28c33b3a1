//! Library surface of the `nvsim` command-line front end: configuration
//! schema, manifest writing, and the subcommand implementations.

pub mod commands;
pub mod config;
pub mod manifest;

/// CLI failure, classified for the exit code: config errors exit 2,
/// runtime/numeric failures exit 3.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Self::Runtime(msg.into())
    }

    pub fn config_from(err: nvsim_core::Error) -> Self {
        Self::Config(err.to_string())
    }

    pub fn runtime_from(err: nvsim_core::Error) -> Self {
        Self::Runtime(err.to_string())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Config(msg) => write!(f, "config error: {msg}"),
            Self::Runtime(msg) => write!(f, "error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}
