use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated an operation's precondition.
    #[error("rejected input: {0}")]
    InvalidInput(String),

    #[error("{}:{line}: {message}", path.display())]
    Ingestion {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("training diverged in {stage} at epoch {epoch}")]
    Diverged { stage: &'static str, epoch: usize },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("trial {trial}: {source}")]
    Trial {
        trial: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("model file: {0}")]
    Format(String),

    #[error("model file version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn ingestion(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Ingestion {
            path: path.into(),
            line,
            message: msg.into(),
        }
    }

    /// Wraps an error with the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The innermost error, with stage and trial annotations stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } | Error::Trial { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for divergence anywhere in the annotation chain.
    pub fn is_training_failure(&self) -> bool {
        matches!(self.root(), Error::Diverged { .. })
    }
}
