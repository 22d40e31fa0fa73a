use std::path::PathBuf;

/// Failures surfaced by the command line, each mapped to an exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Core(#[from] svgen_core::error::Error),
    #[error("numeric failure at step {step}: {detail}")]
    Numeric { step: usize, detail: String },
    #[error("oracle failure: {0}")]
    Oracle(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numeric { .. } | CliError::Core(svgen_core::error::Error::NonFinite { .. }) => 2,
            CliError::Oracle(_) => 3,
            _ => 1,
        }
    }
}
