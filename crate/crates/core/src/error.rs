use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = PcorError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PcorError {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("ingestion error at row {row}, column `{column}`: {message}")]
    Ingestion {
        row: usize,
        column: String,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("candidate list is empty")]
    EmptyCandidates,

    #[error("no candidate has a finite utility")]
    NoValidCandidate,

    #[error("target {target} has no matching context")]
    NoValidContext { target: u64 },

    #[error("uniform sampling exhausted after {attempts} attempts with {found} of {requested} matches")]
    SamplingExhausted {
        attempts: u64,
        found: usize,
        requested: usize,
    },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("no starting context found for target {target} within {attempts} attempts")]
    NoStartingContext { target: u64, attempts: u64 },

    #[error("exhaustive enumeration over t = {t} bits exceeds the cap of {cap}; raise the cap explicitly to proceed")]
    EnumerationCap { t: usize, cap: usize },

    #[error("reference file fingerprint mismatch: expected {expected}, found {found}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("unknown record id {0}")]
    UnknownRecord(u64),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },
}

impl PcorError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PcorError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, message: impl Into<String>) -> Self {
        PcorError::Format {
            what,
            message: message.into(),
        }
    }
}
