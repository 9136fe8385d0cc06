use std::io;
use std::path::PathBuf;

use stagerank_core::rerank::ScorerError;

/// Everything a command can fail with, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{0}")]
    Data(String),
    #[error("scorer failure: {0}")]
    Scorer(#[from] ScorerError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl ToString) -> Self {
        Self::Parse {
            path: path.into(),
            line,
            message: message.to_string(),
        }
    }

    pub fn data(message: impl ToString) -> Self {
        Self::Data(message.to_string())
    }

    /// 1 usage, 2 data, 3 scorer.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Io { .. } | Self::Parse { .. } | Self::Data(_) => 2,
            Self::Scorer(_) => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
