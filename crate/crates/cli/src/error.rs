use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("manifest error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("numerical abort: {message}")]
    Numerical { message: String, checkpoint: Option<PathBuf> },

    #[error("{0}")]
    Core(nfinv_core::Error),

    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },

    #[error("malformed file {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl CliError {
    /// 2 for manifest problems, 3 for numerical aborts, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema { .. } => 2,
            CliError::Numerical { .. } => 3,
            _ => 1,
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io { context: context.into(), source }
    }
}

impl From<nfinv_core::Error> for CliError {
    fn from(e: nfinv_core::Error) -> Self {
        match e {
            nfinv_core::Error::Numerical(message) => {
                let checkpoint = message
                    .split("last finite weights in ")
                    .nth(1)
                    .map(|p| PathBuf::from(p.trim()));
                CliError::Numerical { message, checkpoint }
            }
            other => CliError::Core(other),
        }
    }
}
