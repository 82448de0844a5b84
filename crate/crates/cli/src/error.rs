use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<CliError>,
    },

    #[error(transparent)]
    Core(#[from] tagmt::Error),
}

fn core_exit_code(e: &tagmt::Error) -> i32 {
    match e {
        tagmt::Error::Argument(_) | tagmt::Error::Config(_) => 1,
        tagmt::Error::Diverged { .. } => 3,
        tagmt::Error::Sentence { source, .. } => core_exit_code(source),
        tagmt::Error::Parse { .. } | tagmt::Error::Data(_) | tagmt::Error::Io(_) => 2,
    }
}

impl CliError {
    /// 0 success, 1 usage or configuration, 2 data or I/O, 3 training divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Io { .. } => 2,
            CliError::Stage { source, .. } => source.exit_code(),
            CliError::Core(e) => core_exit_code(e),
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}
