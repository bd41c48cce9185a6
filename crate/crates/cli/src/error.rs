use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("resource limit: {0}")]
    ResourceCap(String),

    #[error("{failed} check(s) failed")]
    ChecksFailed { failed: usize },

    #[error(transparent)]
    Library(bbgky::Error),

    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// Process exit status: 2 configuration, 3 failed checks, 4 resource cap.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::ChecksFailed { .. } => 3,
            CliError::ResourceCap(_) => 4,
            CliError::Library(_) | CliError::Io { .. } => 1,
        }
    }
}

impl From<bbgky::Error> for CliError {
    fn from(e: bbgky::Error) -> Self {
        match e {
            bbgky::Error::CapExceeded { .. } => CliError::ResourceCap(e.to_string()),
            other => CliError::Library(other),
        }
    }
}
