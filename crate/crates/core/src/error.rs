use thiserror::Error;

use crate::dsp::DspError;
use crate::metrics::MetricsError;
use crate::mixer::MixerError;
use crate::querygen::QueryError;
use crate::separator::SeparatorError;
use crate::trainer::TrainError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-wide error, one variant per module.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Separator(#[from] SeparatorError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Mixer(#[from] MixerError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("{0}")]
    Usage(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Format(String),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Process exit code: 1 usage, 2 I/O or bad input files, 3 numeric or
    /// divergence, 4 provider.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Io { .. } | Error::Format(_) => 2,
            Error::Dsp(e) => {
                if e.is_io() {
                    2
                } else {
                    3
                }
            }
            Error::Mixer(e) => {
                if e.is_io() {
                    2
                } else {
                    3
                }
            }
            Error::Separator(e) => {
                if e.is_io() {
                    2
                } else {
                    3
                }
            }
            Error::Train(_) | Error::Metrics(_) => 3,
            Error::Query(e) => {
                if e.is_input() {
                    2
                } else {
                    4
                }
            }
        }
    }
}
