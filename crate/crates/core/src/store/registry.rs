use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_error, StoreError};
use crate::automl::artifact::{from_artifact_json, to_artifact_json};
use crate::automl::{FittedModel, ModelKind, ModelReport};

pub fn save_model(path: &Path, model: &FittedModel) -> Result<(), StoreError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_atomic(path, to_artifact_json(model).as_bytes())
}

pub fn load_model(path: &Path) -> Result<FittedModel, StoreError> {
    let text = fs::read_to_string(path)?;
    Ok(from_artifact_json(&text)?)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| io_error(e, &tmp.display().to_string()))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub name: String,
    pub kind: ModelKind,
    pub fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<ModelReport>,
}

/// A directory of `<name>.model.json` artifacts with optional
/// `<name>.report.json` metric rows.
#[derive(Debug, Clone)]
pub struct ModelRegistry {
    dir: PathBuf,
}

impl ModelRegistry {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn model_path(&self, name: &str) -> PathBuf {
        self.dir.join(format!("{name}.model.json"))
    }

    fn report_path(&self, name: &str) -> PathBuf {
        self.dir.join(format!("{name}.report.json"))
    }

    pub fn save(&self, name: &str, model: &FittedModel, report: Option<&ModelReport>) -> Result<(), StoreError> {
        save_model(&self.model_path(name), model)?;
        if let Some(r) = report {
            let mut text = serde_json::to_string_pretty(r).expect("report serializes");
            text.push('\n');
            write_atomic(&self.report_path(name), text.as_bytes())?;
        }
        Ok(())
    }

    pub fn load(&self, name: &str) -> Result<FittedModel, StoreError> {
        let p = self.model_path(name);
        if !p.exists() {
            return Err(StoreError::ModelNotFound(name.to_string()));
        }
        load_model(&p)
    }

    /// Entries sorted by name. Unreadable artifacts are reported as errors.
    pub fn list(&self) -> Result<Vec<RegistryEntry>, StoreError> {
        let mut out = Vec::new();
        if !self.dir.exists() {
            return Ok(out);
        }
        let mut names: Vec<String> = fs::read_dir(&self.dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".model.json")).map(String::from))
            .collect();
        names.sort();
        for name in names {
            let text = fs::read_to_string(self.model_path(&name))?;
            let model = from_artifact_json(&text)?;
            let fingerprint = serde_json::from_str::<serde_json::Value>(&text)
                .ok()
                .and_then(|v| v.get("fingerprint").and_then(|f| f.as_str()).map(String::from))
                .unwrap_or_default();
            let report = fs::read_to_string(self.report_path(&name))
                .ok()
                .and_then(|t| serde_json::from_str(&t).ok());
            out.push(RegistryEntry {
                name,
                kind: model.spec.kind,
                fingerprint,
                report,
            });
        }
        Ok(out)
    }
}
