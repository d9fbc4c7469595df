//! Command-level failures, each mapped to its own exit code.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("missing artifact {0}; run `cfprior fit` first or point to an existing file")]
    MissingArtifact(PathBuf),
    #[error("malformed CSV in {path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("malformed config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("malformed artifact {path}: {message}")]
    Artifact { path: PathBuf, message: String },
    #[error("dataset does not match schema: {0}")]
    SchemaMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error(transparent)]
    Core(#[from] cfprior_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 3,
            CliError::MissingArtifact(_) => 4,
            CliError::Csv { .. } => 5,
            CliError::Config { .. } => 6,
            CliError::Artifact { .. } => 7,
            CliError::SchemaMismatch(_) => 8,
            CliError::InvalidParam(_) => 9,
            CliError::Core(_) => 10,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            return CliError::MissingArtifact(path);
        }
        CliError::Io { path, source }
    }
}

pub type CliResult<T> = Result<T, CliError>;
