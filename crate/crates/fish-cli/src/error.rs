//! Error type mapped to process exit codes: 2 for parse errors, 3 for
//! checkpoint errors, 1 for everything else.

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    /// Malformed input: waveform files, manifests, configs, stdin samples.
    Parse(String),
    /// Unusable checkpoint.
    Checkpoint(String),
    Other(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Checkpoint(_) => 3,
            CliError::Other(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Parse(e) => write!(f, "parse error: {e}"),
            CliError::Checkpoint(e) => write!(f, "checkpoint error: {e}"),
            CliError::Other(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<fish_core::fsh1::Fsh1Error> for CliError {
    fn from(e: fish_core::fsh1::Fsh1Error) -> Self {
        CliError::Parse(e.to_string())
    }
}

impl From<fish_core::checkpoint::CheckpointError> for CliError {
    fn from(e: fish_core::checkpoint::CheckpointError) -> Self {
        CliError::Checkpoint(e.to_string())
    }
}

impl From<fish_core::tensor::TensorError> for CliError {
    fn from(e: fish_core::tensor::TensorError) -> Self {
        CliError::Other(anyhow::anyhow!("{e}"))
    }
}

impl From<fish_core::training::TrainError> for CliError {
    fn from(e: fish_core::training::TrainError) -> Self {
        CliError::Other(anyhow::anyhow!("{e}"))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(anyhow::anyhow!("{e}"))
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Other(e)
    }
}
