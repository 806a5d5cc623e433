//! Library side of the `hat` command-line tool.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error
//! (malformed or missing input), 3 remote service unavailable.

pub mod bench;
pub mod commands;
pub mod config;

use hat_memory::aggregation::AggregateError;
use hat_memory::hat::HatError;
use hat_memory::llm::LlmError;
use hat_memory::pipeline::PipelineError;
use hat_memory::traversal::TraversalError;
use thiserror::Error;

pub use commands::{run, Cli};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Remote(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Remote(_) => 3,
        }
    }
}

impl From<LlmError> for CliError {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Remote(e.to_string()),
        }
    }
}

impl From<HatError> for CliError {
    fn from(e: HatError) -> Self {
        match e {
            HatError::Aggregation(AggregateError::Unavailable(inner)) => inner.into(),
            HatError::InvalidParameter(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Tree(inner) => inner.into(),
            PipelineError::Traversal(TraversalError::Unavailable(inner)) => inner.into(),
            PipelineError::Traversal(inner) => CliError::Usage(inner.to_string()),
            PipelineError::Generation(inner) => inner.into(),
            PipelineError::Config(msg) => CliError::Usage(msg),
            PipelineError::SessionNotFound(_) | PipelineError::InvalidTurn(_) => {
                CliError::Data(e.to_string())
            }
        }
    }
}
