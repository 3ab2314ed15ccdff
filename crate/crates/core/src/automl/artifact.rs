//! Versioned JSON artifact for fitted models.
//!
//! ```text
//! {"format_version": 1, "spec": …, "parameters": …, "feature_names": […],
//!  "training_fingerprint": "…", "normalizer": …, "fingerprint": "<sha256>"}
//! ```
//!
//! `fingerprint` is the SHA-256 of the compact JSON of every other field
//! (keys sorted). Floats are decimal strings with 17 significant digits.

use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::FittedModel;

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ArtifactError {
    #[error("unsupported artifact format version {found} (supported: {FORMAT_VERSION})")]
    VersionMismatch { found: u64 },
    #[error("corrupt artifact: {0}")]
    CorruptArtifact(String),
}

fn digest(body: &Map<String, Value>) -> String {
    // serde_json maps are ordered by key, so this encoding is canonical.
    let bytes = serde_json::to_vec(body).expect("json value serializes");
    hex::encode(Sha256::digest(bytes))
}

pub fn to_artifact_json(m: &FittedModel) -> String {
    let mut body = match serde_json::to_value(m).expect("model serializes") {
        Value::Object(map) => map,
        _ => unreachable!("FittedModel serializes to an object"),
    };
    body.insert("format_version".into(), Value::from(FORMAT_VERSION));
    let fp = digest(&body);
    body.insert("fingerprint".into(), Value::from(fp));
    let mut text = serde_json::to_string_pretty(&Value::Object(body)).expect("json value serializes");
    text.push('\n');
    text
}

pub fn from_artifact_json(text: &str) -> Result<FittedModel, ArtifactError> {
    let corrupt = |m: String| ArtifactError::CorruptArtifact(m);
    let value: Value = serde_json::from_str(text).map_err(|e| corrupt(e.to_string()))?;
    let Value::Object(mut body) = value else {
        return Err(corrupt("artifact is not a JSON object".into()));
    };
    let version = body
        .get("format_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| corrupt("missing format_version".into()))?;
    if version != FORMAT_VERSION {
        return Err(ArtifactError::VersionMismatch { found: version });
    }
    let stored = match body.remove("fingerprint") {
        Some(Value::String(s)) => s,
        _ => return Err(corrupt("missing fingerprint".into())),
    };
    if digest(&body) != stored {
        return Err(corrupt("fingerprint mismatch".into()));
    }
    body.remove("format_version");
    serde_json::from_value(Value::Object(body)).map_err(|e| corrupt(e.to_string()))
}
