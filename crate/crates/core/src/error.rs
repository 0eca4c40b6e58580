use std::path::PathBuf;

use apnea_autograd::AutogradError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("unsupported channel count {0} (only mono input is accepted)")]
    ChannelCount(u16),

    #[error("unsupported encoding: {0}")]
    Encoding(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("incompatible artifact: {0}")]
    Artifact(String),

    #[error(transparent)]
    Autograd(#[from] AutogradError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Process exit status for command-line use: 2 configuration,
    /// 3 input data, 4 incompatible artifact, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. }
            | Error::Wav { .. }
            | Error::ChannelCount(_)
            | Error::Encoding(_)
            | Error::Parse { .. }
            | Error::Data(_) => 3,
            Error::Artifact(_) => 4,
            Error::Autograd(_) => 1,
        }
    }
}
