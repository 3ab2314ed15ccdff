//! Statistical labeling of sensor streams.
//!
//! Each sensor keeps a sliding window of its most recent values. The window's
//! normal-approximation confidence interval `mean ± z·s/√n` (sample standard
//! deviation) is compared with the sensor's normal operating range: a CI that
//! leaves the range labels the newest observation as a failure signal (1).
//! Labels are fused into a machine-level expected value `E = Σ label·weight`,
//! and a management policy turns `E` into an intervention flag.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::ingest::SensorReading;

pub const WEIGHT_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_WINDOW: usize = 30;
pub const DEFAULT_Z: f64 = 1.96;

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("window has {0} values; at least 2 are required")]
    WindowTooSmall(usize),
    #[error("critical value must be positive, got {0}")]
    InvalidZ(f64),
    #[error("weights sum to {sum}, expected 1 ± 1e-9")]
    WeightMismatch { sum: f64 },
    #[error("invalid sensor spec `{sensor}`: {reason}")]
    InvalidSpec { sensor: String, reason: String },
    #[error("labels do not cover the configured sensor set: {0}")]
    SensorSetMismatch(String),
    #[error("sensor `{sensor}` is not configured for machine `{machine}`")]
    UnknownSensor { machine: String, sensor: String },
    #[error("no sensor specs for machine `{0}`")]
    UnknownMachine(String),
    #[error("policy threshold must be within [0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("config error: {0}")]
    Config(String),
}

/// Normal operating range and fusion weight of one sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub sensor_id: String,
    pub low: f64,
    pub high: f64,
    pub weight: f64,
}

impl SensorSpec {
    pub fn new(sensor_id: impl Into<String>, low: f64, high: f64, weight: f64) -> Self {
        Self {
            sensor_id: sensor_id.into(),
            low,
            high,
            weight,
        }
    }
}

/// A machine's validated sensor set: ranges ordered, weights non-negative and
/// summing to one. Weights are never renormalised.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct SpecSet {
    specs: Vec<SensorSpec>,
}

impl SpecSet {
    pub fn new(specs: Vec<SensorSpec>) -> Result<Self, LabelError> {
        if specs.is_empty() {
            return Err(LabelError::SensorSetMismatch("empty sensor set".into()));
        }
        for (i, s) in specs.iter().enumerate() {
            let bad = |reason: &str| LabelError::InvalidSpec {
                sensor: s.sensor_id.clone(),
                reason: reason.to_string(),
            };
            if s.sensor_id.is_empty() {
                return Err(bad("empty sensor id"));
            }
            if !(s.low.is_finite() && s.high.is_finite()) || s.low > s.high {
                return Err(bad("low must not exceed high"));
            }
            if !(0.0..=1.0).contains(&s.weight) {
                return Err(bad("weight outside [0, 1]"));
            }
            if specs[..i].iter().any(|o| o.sensor_id == s.sensor_id) {
                return Err(bad("duplicate sensor id"));
            }
        }
        let sum: f64 = specs.iter().map(|s| s.weight).sum();
        if (sum - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(LabelError::WeightMismatch { sum });
        }
        Ok(Self { specs })
    }

    pub fn specs(&self) -> &[SensorSpec] {
        &self.specs
    }

    pub fn get(&self, sensor_id: &str) -> Option<&SensorSpec> {
        self.specs.iter().find(|s| s.sensor_id == sensor_id)
    }

    pub fn position(&self, sensor_id: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.sensor_id == sensor_id)
    }

    pub fn sensor_ids(&self) -> impl Iterator<Item = &str> {
        self.specs.iter().map(|s| s.sensor_id.as_str())
    }
}

impl<'de> Deserialize<'de> for SpecSet {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let specs = Vec::<SensorSpec>::deserialize(de)?;
        SpecSet::new(specs).map_err(serde::de::Error::custom)
    }
}

/// Reference ranges and weights for the seven furnace vibration sensors.
pub fn furnace_reference_specs() -> SpecSet {
    SpecSet::new(vec![
        SensorSpec::new("S1", 0.0, 2.5, 0.10),
        SensorSpec::new("S2", 0.0, 5000.0, 0.03),
        SensorSpec::new("S3", 0.0, 2.5, 0.10),
        SensorSpec::new("S4", 0.0, 5.0, 0.02),
        SensorSpec::new("S5", 0.0, 50.0, 0.25),
        SensorSpec::new("S6", 0.0, 60.0, 0.30),
        SensorSpec::new("S7", 0.0, 360.0, 0.20),
    ])
    .expect("reference weights sum to one")
}

/// Per-machine sensor specs loaded from JSON: `{"<machine>": [spec, ...]}`.
/// The key `*` supplies specs for machines without their own entry.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpecConfig {
    pub machines: BTreeMap<String, SpecSet>,
}

impl SpecConfig {
    pub fn from_json(text: &str) -> Result<Self, LabelError> {
        serde_json::from_str(text).map_err(|e| LabelError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, LabelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabelError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn single(machine: impl Into<String>, specs: SpecSet) -> Self {
        Self {
            machines: BTreeMap::from([(machine.into(), specs)]),
        }
    }

    pub fn for_machine(&self, machine: &str) -> Option<&SpecSet> {
        self.machines.get(machine).or_else(|| self.machines.get("*"))
    }

    /// Sensor ids across every configured machine, de-duplicated.
    pub fn all_sensor_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .machines
            .values()
            .flat_map(|s| s.sensor_ids().map(str::to_string))
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub std: f64,
    pub z: f64,
}

impl WindowStats {
    pub fn from_window(window: &[f64], z: f64) -> Result<Self, LabelError> {
        let n = window.len();
        if n < 2 {
            return Err(LabelError::WindowTooSmall(n));
        }
        if !(z > 0.0) || !z.is_finite() {
            return Err(LabelError::InvalidZ(z));
        }
        let mean = window.iter().sum::<f64>() / n as f64;
        let ss: f64 = window.iter().map(|x| (x - mean).powi(2)).sum();
        let std = (ss / (n - 1) as f64).sqrt();
        Ok(Self { n, mean, std, z })
    }

    pub fn half_width(&self) -> f64 {
        self.z * self.std / (self.n as f64).sqrt()
    }

    pub fn interval(&self) -> ConfidenceInterval {
        let h = self.half_width();
        ConfidenceInterval {
            low: self.mean - h,
            high: self.mean + h,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub low: f64,
    pub high: f64,
}

pub fn compute_ci(window: &[f64], z: f64) -> Result<ConfidenceInterval, LabelError> {
    Ok(WindowStats::from_window(window, z)?.interval())
}

/// Two-sided critical value for a confidence level, rounded to two decimals
/// as in printed normal tables (0.95 -> 1.96).
pub fn z_for_confidence(level: f64) -> Result<f64, LabelError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(LabelError::Config(format!("confidence level must be in (0, 1), got {level}")));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let z = normal.inverse_cdf(0.5 + level / 2.0);
    Ok((z * 100.0).round() / 100.0)
}

/// 0 when the interval lies inside the sensor's normal range, else 1.
pub fn label_sensor(ci: &ConfidenceInterval, spec: &SensorSpec) -> u8 {
    if ci.low >= spec.low && ci.high <= spec.high {
        0
    } else {
        1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorLabel {
    pub sensor_id: String,
    pub label: u8,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// `E = Σ label_i · weight_i` over the spec set. Labels must cover exactly the
/// configured sensors.
pub fn expected_value(labels: &[SensorLabel], specs: &[SensorSpec]) -> Result<f64, LabelError> {
    let sum: f64 = specs.iter().map(|s| s.weight).sum();
    if (sum - 1.0).abs() > WEIGHT_TOLERANCE || specs.iter().any(|s| s.weight < 0.0) {
        return Err(LabelError::WeightMismatch { sum });
    }
    if labels.len() != specs.len() {
        return Err(LabelError::SensorSetMismatch(format!(
            "{} labels for {} sensors",
            labels.len(),
            specs.len()
        )));
    }
    let mut e = 0.0;
    for spec in specs {
        let mut matching = labels.iter().filter(|l| l.sensor_id == spec.sensor_id);
        let label = match (matching.next(), matching.next()) {
            (Some(l), None) => l,
            (None, _) => {
                return Err(LabelError::SensorSetMismatch(format!("no label for `{}`", spec.sensor_id)))
            }
            (Some(_), Some(_)) => {
                return Err(LabelError::SensorSetMismatch(format!(
                    "duplicate label for `{}`",
                    spec.sensor_id
                )))
            }
        };
        e += f64::from(label.label) * spec.weight;
    }
    Ok(e.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyStyle {
    Conservative,
    Moderate,
    Aggressive,
}

impl PolicyStyle {
    pub fn default_threshold(self) -> f64 {
        match self {
            PolicyStyle::Conservative => 0.2,
            PolicyStyle::Moderate => 0.6,
            PolicyStyle::Aggressive => 0.8,
        }
    }
}

impl std::str::FromStr for PolicyStyle {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "conservative" => Ok(PolicyStyle::Conservative),
            "moderate" => Ok(PolicyStyle::Moderate),
            "aggressive" => Ok(PolicyStyle::Aggressive),
            other => Err(LabelError::Config(format!("unknown policy style `{other}`"))),
        }
    }
}

/// Management style and the expected-value threshold at which to intervene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManagementPolicy {
    pub style: PolicyStyle,
    pub threshold: f64,
}

impl ManagementPolicy {
    pub fn preset(style: PolicyStyle) -> Self {
        Self {
            style,
            threshold: style.default_threshold(),
        }
    }

    pub fn with_threshold(style: PolicyStyle, threshold: f64) -> Result<Self, LabelError> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(LabelError::InvalidThreshold(threshold));
        }
        Ok(Self { style, threshold })
    }
}

impl Default for ManagementPolicy {
    fn default() -> Self {
        Self::preset(PolicyStyle::Moderate)
    }
}

/// 1 when `E` reaches the policy threshold.
pub fn classify_condition(e: f64, policy: &ManagementPolicy) -> u8 {
    u8::from(e >= policy.threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionEstimate {
    pub machine_id: String,
    pub timestamp: i64,
    pub labels: Vec<SensorLabel>,
    pub expected_value: f64,
    pub intervene: u8,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelerOptions {
    pub window_size: usize,
    pub z: f64,
}

impl Default for LabelerOptions {
    fn default() -> Self {
        Self {
            window_size: DEFAULT_WINDOW,
            z: DEFAULT_Z,
        }
    }
}

/// Sliding-window labeler for one machine.
///
/// A tuple completes once every configured sensor has delivered at least one
/// reading since the previous estimate. Estimates are emitted only after
/// every window holds `window_size` values.
#[derive(Debug, Clone)]
pub struct MachineLabeler {
    machine_id: String,
    specs: SpecSet,
    opts: LabelerOptions,
    windows: Vec<VecDeque<f64>>,
    fresh: Vec<bool>,
    latest_ts: i64,
}

impl MachineLabeler {
    pub fn new(machine_id: impl Into<String>, specs: SpecSet, opts: LabelerOptions) -> Result<Self, LabelError> {
        if opts.window_size < 2 {
            return Err(LabelError::WindowTooSmall(opts.window_size));
        }
        if !(opts.z > 0.0) {
            return Err(LabelError::InvalidZ(opts.z));
        }
        let k = specs.specs().len();
        Ok(Self {
            machine_id: machine_id.into(),
            specs,
            opts,
            windows: vec![VecDeque::with_capacity(opts.window_size); k],
            fresh: vec![false; k],
            latest_ts: 0,
        })
    }

    pub fn specs(&self) -> &SpecSet {
        &self.specs
    }

    pub fn is_warm(&self) -> bool {
        self.windows.iter().all(|w| w.len() >= self.opts.window_size)
    }

    pub fn push(
        &mut self,
        reading: &SensorReading,
        policy: &ManagementPolicy,
    ) -> Result<Option<ConditionEstimate>, LabelError> {
        let idx = self
            .specs
            .position(&reading.sensor_id)
            .ok_or_else(|| LabelError::UnknownSensor {
                machine: self.machine_id.clone(),
                sensor: reading.sensor_id.clone(),
            })?;
        let w = &mut self.windows[idx];
        if w.len() == self.opts.window_size {
            w.pop_front();
        }
        w.push_back(reading.value);
        self.fresh[idx] = true;
        self.latest_ts = self.latest_ts.max(reading.timestamp);

        if !self.fresh.iter().all(|&f| f) || !self.is_warm() {
            return Ok(None);
        }
        self.fresh.iter_mut().for_each(|f| *f = false);

        let mut labels = Vec::with_capacity(self.windows.len());
        for (spec, window) in self.specs.specs().iter().zip(&self.windows) {
            let (a, b) = window.as_slices();
            let values: Vec<f64> = a.iter().chain(b).copied().collect();
            let ci = compute_ci(&values, self.opts.z)?;
            labels.push(SensorLabel {
                sensor_id: spec.sensor_id.clone(),
                label: label_sensor(&ci, spec),
                ci_low: ci.low,
                ci_high: ci.high,
            });
        }
        let e = expected_value(&labels, self.specs.specs())?;
        Ok(Some(ConditionEstimate {
            machine_id: self.machine_id.clone(),
            timestamp: self.latest_ts,
            labels,
            expected_value: e,
            intervene: classify_condition(e, policy),
        }))
    }
}

/// Routes readings from many machines to per-machine labelers.
#[derive(Debug, Clone)]
pub struct FleetLabeler {
    config: SpecConfig,
    opts: LabelerOptions,
    default_policy: ManagementPolicy,
    policies: HashMap<String, ManagementPolicy>,
    machines: HashMap<String, MachineLabeler>,
}

impl FleetLabeler {
    pub fn new(config: SpecConfig, opts: LabelerOptions, default_policy: ManagementPolicy) -> Result<Self, LabelError> {
        if opts.window_size < 2 {
            return Err(LabelError::WindowTooSmall(opts.window_size));
        }
        Ok(Self {
            config,
            opts,
            default_policy,
            policies: HashMap::new(),
            machines: HashMap::new(),
        })
    }

    pub fn set_default_policy(&mut self, policy: ManagementPolicy) {
        self.default_policy = policy;
    }

    pub fn set_policy(&mut self, machine: &str, policy: ManagementPolicy) {
        self.policies.insert(machine.to_string(), policy);
    }

    pub fn policy_for(&self, machine: &str) -> ManagementPolicy {
        self.policies.get(machine).copied().unwrap_or(self.default_policy)
    }

    pub fn push(&mut self, reading: &SensorReading) -> Result<Option<ConditionEstimate>, LabelError> {
        let policy = self.policy_for(&reading.machine_id);
        let labeler = match self.machines.get_mut(&reading.machine_id) {
            Some(l) => l,
            None => {
                let specs = self
                    .config
                    .for_machine(&reading.machine_id)
                    .ok_or_else(|| LabelError::UnknownMachine(reading.machine_id.clone()))?
                    .clone();
                let l = MachineLabeler::new(reading.machine_id.clone(), specs, self.opts)?;
                self.machines.entry(reading.machine_id.clone()).or_insert(l)
            }
        };
        labeler.push(reading, &policy)
    }
}

/// Labels an ordered reading stream, yielding one estimate per completed tuple.
/// Readings for unconfigured sensors or machines surface as errors and do not
/// stop the stream.
pub fn label_stream<I>(
    readings: I,
    config: SpecConfig,
    opts: LabelerOptions,
    policy: ManagementPolicy,
) -> Result<impl Iterator<Item = Result<ConditionEstimate, LabelError>>, LabelError>
where
    I: IntoIterator<Item = SensorReading>,
{
    let mut fleet = FleetLabeler::new(config, opts, policy)?;
    Ok(readings
        .into_iter()
        .filter_map(move |r| fleet.push(&r).transpose()))
}
