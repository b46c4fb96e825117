//! Command-line front end for the inference crate.
//!
//! Four commands: `validate` a model file, `run` one configuration to a
//! trace and summary, `sweep` a grid of methods × K × seeds with aggregate
//! statistics, and `oracle` to print an exact reference posterior for a
//! built-in model.
//!
//! Configurations are flat `key = value` text files; lists are
//! comma-separated. All floating-point output uses shortest round-trip
//! decimal so files re-parse to the exact in-memory values.

use std::fmt;

pub mod config;
pub mod outputs;
pub mod problem;
pub mod runner;
pub mod sweep;

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "QEM_OUT_DIR";

/// Errors carrying their process exit code: 1 for domain and validation
/// failures, 2 for I/O and configuration failures.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration file or command usage → exit 2.
    Config(String),
    /// Filesystem failure → exit 2.
    Io(String),
    /// Model, data, or inference failure → exit 1.
    Domain(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Domain(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config: {m}"),
            CliError::Io(m) => write!(f, "io: {m}"),
            CliError::Domain(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}
