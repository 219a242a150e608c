//! Experiment drivers behind the `stablqr` binary.
//!
//! Each experiment is a pure function from a validated configuration to a
//! list of trial records (plus experiment-specific reports), so the full
//! pipeline is scriptable and testable without going through the CLI.

pub mod config;
pub mod experiments;
pub mod records;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("the pair (F, Q^(1/2)) is not detectable")]
    NotDetectable,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Process exit code contract: 2 config validation, 3 solver hard
    /// failure, 4 a not-detectable verdict on a single solve.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::NotDetectable => 4,
            CliError::Io(_) => 3,
        }
    }
}

impl From<stablqr::stability::StabilityError> for CliError {
    fn from(e: stablqr::stability::StabilityError) -> Self {
        match e {
            stablqr::stability::StabilityError::NotDetectable => CliError::NotDetectable,
            other => CliError::Solver(other.to_string()),
        }
    }
}

impl From<stablqr::lqr::LqrError> for CliError {
    fn from(e: stablqr::lqr::LqrError) -> Self {
        CliError::Solver(e.to_string())
    }
}

impl From<stablqr::MatrixError> for CliError {
    fn from(e: stablqr::MatrixError) -> Self {
        CliError::Solver(e.to_string())
    }
}

impl From<stablqr::scenario::ScenarioError> for CliError {
    fn from(e: stablqr::scenario::ScenarioError) -> Self {
        CliError::Solver(e.to_string())
    }
}

impl From<stablqr::leslie::LeslieError> for CliError {
    fn from(e: stablqr::leslie::LeslieError) -> Self {
        CliError::Solver(e.to_string())
    }
}
