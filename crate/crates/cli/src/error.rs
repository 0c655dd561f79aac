use std::path::PathBuf;

/// Command failures, each mapped to a stable process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged: non-finite `{term}` at step {step}")]
    Divergence { term: &'static str, step: u64 },

    #[error("i/o error on {path}: {message}")]
    Io { path: PathBuf, message: String },

    #[error(transparent)]
    Core(tcgan::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Divergence { .. } => 3,
            CliError::Io { .. } => 4,
            CliError::Core(_) => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.into(),
            message: e.to_string(),
        }
    }
}

impl From<tcgan::Error> for CliError {
    fn from(e: tcgan::Error) -> Self {
        match e {
            tcgan::Error::NonFinite { term, step } => CliError::Divergence { term, step },
            tcgan::Error::Io { path, source } => CliError::io(path, source),
            tcgan::Error::InvalidArgument(m) => CliError::Config(m),
            other => CliError::Core(other),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
