//! Dataset generation, experiment orchestration, reports and the CLI glue.

pub mod config;
pub mod dataset;
pub mod experiment;
pub mod gen;
pub mod report;

use thiserror::Error;

pub use config::{ExperimentConfig, TokenizerConfig};
pub use dataset::{build_dataset, DatasetEntry, Split};
pub use experiment::{run_experiment, ExperimentOutput};

#[derive(Debug, Error)]
pub enum PipelineError {
    /// `line` is 0 for errors found while validating the whole config.
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error(transparent)]
    Gen(#[from] gen::GenError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] declab_seq2seq::ModelError),
    #[error(transparent)]
    Tokenizer(#[from] declab_core::tokenizer::TokenizerError),
    #[error("dataset: {0}")]
    Data(String),
    #[error("{0} functions appear in both the train and the test split")]
    Leakage(usize),
}

impl PipelineError {
    /// Process exit status for the command line: 2 for configuration
    /// problems, 3 for everything that aborts a run.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config { .. } => 2,
            _ => 3,
        }
    }
}
