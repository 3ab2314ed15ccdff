//! Durable persistence: the append-only event log and model artifact files.
//!
//! Log segments hold one frame per record:
//!
//! ```text
//! <u32 length, little-endian><u32 crc32 of the json bytes><utf8 json>\n
//! ```
//!
//! `length` counts only the JSON bytes. Segments are named
//! `events-YYYY-MM-DD.log` after the UTC day of each record's wall time.

mod log;
mod registry;

use thiserror::Error;

pub use log::{
    decode_frames, encode_frame, validate_payload, Durability, EventKind, EventLog, EventRecord, FrameScan,
    RecoveryReport, SeqRange, LOCK_FILE,
};
pub use registry::{load_model, save_model, ModelRegistry, RegistryEntry};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("disk full while writing {0}")]
    DiskFull(String),
    #[error("payload does not match schema for `{kind}`: {reason}")]
    SchemaViolation { kind: String, reason: String },
    #[error("event log at {0} is locked by another writer")]
    Locked(String),
    #[error("corrupt log segment {file} at byte {offset}")]
    CorruptLog { file: String, offset: u64 },
    #[error("artifact format_version {found} is not supported")]
    VersionMismatch { found: u64 },
    #[error("corrupt artifact: {0}")]
    CorruptArtifact(String),
    #[error("model `{0}` not found")]
    ModelNotFound(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl From<crate::automl::artifact::ArtifactError> for StoreError {
    fn from(e: crate::automl::artifact::ArtifactError) -> Self {
        use crate::automl::artifact::ArtifactError;
        match e {
            ArtifactError::VersionMismatch { found } => StoreError::VersionMismatch { found },
            ArtifactError::CorruptArtifact(s) => StoreError::CorruptArtifact(s),
        }
    }
}

const ENOSPC: i32 = 28;

pub(crate) fn io_error(e: std::io::Error, what: &str) -> StoreError {
    if e.raw_os_error() == Some(ENOSPC) {
        StoreError::DiskFull(what.to_string())
    } else {
        StoreError::Io(e)
    }
}
