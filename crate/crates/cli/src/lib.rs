//! Library side of the `safenet` binary: config parsing and the verbs.

// `!(x >= 1.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;

pub use config::{AlphaConfig, BenchConfig, MethodEntry, RolloutConfig, RunConfig};

/// Everything a verb can fail with, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad config, scenario or arguments. Exit code 2.
    #[error("config error: {0}")]
    Config(String),
    /// Failure while running a valid config. Exit code 3.
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<safenet_core::sim::SimError> for CliError {
    fn from(e: safenet_core::sim::SimError) -> Self {
        match e {
            safenet_core::sim::SimError::Config(msg) => CliError::Config(msg),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<safenet_core::nn::NnError> for CliError {
    fn from(e: safenet_core::nn::NnError) -> Self {
        match e {
            safenet_core::nn::NnError::Config(msg) => CliError::Config(msg),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
