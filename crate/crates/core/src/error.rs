use std::path::PathBuf;

use crate::model::Basis;

/// Errors raised anywhere in the analysis chain.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid detector channel code {0} (expected 0..=3)")]
    InvalidChannel(u8),

    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),

    #[error("random word {0} outside the 10-bit range [0, 1023]")]
    InvalidRandomWord(u16),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("time-tag stream not sorted at index {index} ({prev} ps followed by {next} ps)")]
    StreamOrder { index: usize, prev: u64, next: u64 },

    #[error("synchronization failed: {0}")]
    SyncFailed(String),

    #[error("histogram has no peak above its baseline")]
    NoPeak,

    #[error("no sifted bits in the {0} basis")]
    EmptyBasis(Basis),

    #[error("argument {0} outside the domain of the function")]
    Domain(f64),

    #[error("error rate {0} makes the fluctuation bound singular")]
    DegenerateErrorRate(f64),

    #[error("no deviation in [0, 0.5 - e_b] reaches the failure-probability target for the {0} sample")]
    InsecureRegime(Basis),

    #[error("no basis bias yields a positive key")]
    NoSecureBias,

    #[error("unbiased reference key is zero, improvement undefined")]
    ZeroBaseline,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// The innermost error, looking through stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn is_config_error(&self) -> bool {
        matches!(
            self.root(),
            Error::Config(_) | Error::InvalidProbability(_) | Error::Json(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
