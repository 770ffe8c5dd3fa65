use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("coordinate u = {u} lies outside the detector range [-{range}, {range}]")]
    OutOfRange { u: f64, range: f64 },

    #[error("idler detector {0} has zero total probability; cannot condition on it")]
    DegenerateConditioning(crate::amplitude::IdlerDetector),

    #[error("marginal density vanishes at u = {0}; idler outcome is undefined")]
    ImpossibleEvent(f64),

    #[error("density cannot be tabulated: {0}")]
    Sampler(String),

    #[error("too few counts for a fit: {total} (need at least {required})")]
    LowStatistics { total: u64, required: u64 },

    #[error("histograms use different binning")]
    BinningMismatch,

    #[error("event log is unresolved: pair {0} has a pending idler")]
    UnresolvedLog(u64),

    #[error("policy {0} cannot be used here")]
    Policy(&'static str),

    #[error("cannot access {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed event log at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("event log checksum mismatch (expected {expected}, computed {computed})")]
    Checksum { expected: String, computed: String },

    #[error("unsupported {what} version {found} (expected {expected})")]
    Version {
        what: &'static str,
        found: String,
        expected: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            line,
            message: message.into(),
        }
    }
}
