//! Pipeline configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use dtf_core::agent::{RouteTable, DEFAULT_DEBOUNCE};
use dtf_core::ingest::{SensorMap, TopicRoute};
use dtf_core::knowledge::{sensor_equipment_rules, smart_maintenance_rules, RuleSet};
use dtf_core::labeler::{furnace_reference_specs, LabelerOptions, ManagementPolicy, PolicyStyle, SpecConfig};

#[derive(Debug, Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub style: PolicyStyle,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            style: PolicyStyle::Moderate,
            threshold: None,
        }
    }
}

impl PolicyConfig {
    pub fn policy(&self) -> Result<ManagementPolicy, ConfigError> {
        match self.threshold {
            None => Ok(ManagementPolicy::preset(self.style)),
            Some(t) => ManagementPolicy::with_threshold(self.style, t).map_err(|e| ConfigError(e.to_string())),
        }
    }
}

/// Everything `dtf` reads from `--config` / `DT_CONFIG`. Relative paths are
/// resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Sensor spec JSON; the furnace reference specs apply to every machine
    /// when absent.
    pub specs: Option<PathBuf>,
    /// Rule files; the two built-in rule sets when empty.
    pub rules: Vec<PathBuf>,
    pub routes: Option<PathBuf>,
    pub window_size: usize,
    pub z: f64,
    pub policy: PolicyConfig,
    pub debounce: usize,
    /// `mqtt://host:port`; in-process bus when absent.
    pub broker: Option<String>,
    pub log_dir: PathBuf,
    pub models_dir: PathBuf,
    pub seed: u64,
    pub bind: String,
    pub sensor_map: Option<SensorMap>,
    pub topic: TopicRoute,
    pub folds: usize,
    pub target: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            specs: None,
            rules: Vec::new(),
            routes: None,
            window_size: 30,
            z: 1.96,
            policy: PolicyConfig::default(),
            debounce: DEFAULT_DEBOUNCE,
            broker: None,
            log_dir: PathBuf::from("data/events"),
            models_dir: PathBuf::from("data/models"),
            seed: 42,
            bind: "127.0.0.1:8080".into(),
            sensor_map: None,
            topic: TopicRoute::default(),
            folds: 10,
            target: "label".into(),
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| ConfigError(format!("config: {e}")))?;
        if let Some(p) = cfg.specs.as_mut() {
            rebase(base, p);
        }
        if let Some(p) = cfg.routes.as_mut() {
            rebase(base, p);
        }
        for p in cfg.rules.iter_mut() {
            rebase(base, p);
        }
        rebase(base, &mut cfg.log_dir);
        rebase(base, &mut cfg.models_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base)
    }

    /// Loads and validates every referenced file.
    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let specs = match &self.specs {
            Some(p) => SpecConfig::load(p).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?,
            None => SpecConfig::single("*", furnace_reference_specs()),
        };
        let rules = if self.rules.is_empty() {
            RuleSet::merge([smart_maintenance_rules(), sensor_equipment_rules()])
        } else {
            let mut sets = Vec::new();
            for p in &self.rules {
                sets.push(RuleSet::load(p).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?);
            }
            RuleSet::merge(sets)
        }
        .map_err(|e| ConfigError(e.to_string()))?;
        let routes = match &self.routes {
            Some(p) => RouteTable::load(p).map_err(|e| ConfigError(e.to_string()))?,
            None => RouteTable::default(),
        };
        if self.debounce == 0 {
            return Err(ConfigError("debounce must be at least 1".into()));
        }
        if self.window_size < 2 {
            return Err(ConfigError("window_size must be at least 2".into()));
        }
        if !(self.z > 0.0 && self.z.is_finite()) {
            return Err(ConfigError("z must be a positive number".into()));
        }
        TopicRoute::new(self.topic.pattern.clone(), self.topic.payload_format).map_err(|e| ConfigError(e.to_string()))?;
        Ok(Resolved {
            policy: self.policy.policy()?,
            labeler: LabelerOptions {
                window_size: self.window_size,
                z: self.z,
            },
            sensor_map: self.sensor_map.clone().unwrap_or_else(SensorMap::furnace_defaults),
            specs,
            rules,
            routes,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Resolved {
    pub specs: SpecConfig,
    pub rules: RuleSet,
    pub routes: RouteTable,
    pub policy: ManagementPolicy,
    pub labeler: LabelerOptions,
    pub sensor_map: SensorMap,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let r = PipelineConfig::default().resolve().unwrap();
        assert_eq!(r.policy.threshold, 0.6);
        assert_eq!(r.rules.rules.len(), 4);
        assert!(r.routes.routes.is_empty());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let cfg = PipelineConfig::from_json(r#"{"specs": "specs.json", "log_dir": "/abs/log"}"#, Path::new("/etc/dt")).unwrap();
        assert_eq!(cfg.specs.unwrap(), PathBuf::from("/etc/dt/specs.json"));
        assert_eq!(cfg.log_dir, PathBuf::from("/abs/log"));
        assert_eq!(cfg.window_size, 30);
    }

    #[test]
    fn missing_files_and_bad_fields_fail() {
        let cfg = PipelineConfig::from_json(r#"{"specs": "nope.json"}"#, Path::new("/nonexistent")).unwrap();
        assert!(cfg.resolve().is_err());
        assert!(PipelineConfig::from_json(r#"{"windw": 3}"#, Path::new(".")).is_err());
        let cfg = PipelineConfig::from_json(r#"{"policy": {"style": "moderate", "threshold": 2}}"#, Path::new(".")).unwrap();
        assert!(cfg.resolve().is_err());
    }
}
