use std::path::PathBuf;

use invmcmc_core::McmcError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("chain {chain} diverged at step {step}: {source}")]
    Divergence {
        chain: usize,
        step: usize,
        #[source]
        source: McmcError,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{failed} of {total} checks failed")]
    ChecksFailed { failed: usize, total: usize },
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Classifies a sampler error from chain `chain`.
    ///
    /// Setup problems are configuration errors; anything numeric is a
    /// divergence at the recorded step, or step 0 if it happened before the
    /// first transition.
    pub fn from_chain(chain: usize, err: McmcError) -> Self {
        let step = match &err {
            McmcError::AtStep { step, .. } => *step,
            _ => 0,
        };
        match err.root() {
            McmcError::Config(msg) => CliError::Config(msg.clone()),
            e @ McmcError::DimensionMismatch { .. } => CliError::Config(e.to_string()),
            _ => CliError::Divergence {
                chain,
                step,
                source: err,
            },
        }
    }

    /// Process exit status: 2 for configuration errors, 3 for numeric
    /// divergence, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Divergence { .. } => 3,
            CliError::Io { .. } | CliError::ChecksFailed { .. } => 1,
        }
    }
}

impl From<McmcError> for CliError {
    fn from(err: McmcError) -> Self {
        CliError::from_chain(0, err)
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
