//! Read models derived from the event log.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use dtf_core::labeler::{classify_condition, ConditionEstimate, ManagementPolicy};
use dtf_core::store::{EventKind, EventRecord};

pub const MAX_SERIES_POINTS: usize = 2_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertRef {
    pub seq: u64,
    pub code: i64,
    pub fired_by: String,
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineState {
    pub machine_id: String,
    pub latest: Option<ConditionEstimate>,
    pub latest_seq: Option<u64>,
    pub sensor_labels: BTreeMap<String, u8>,
    /// Alerts since the machine last returned to a tolerable condition.
    pub active_alerts: Vec<AlertRef>,
    pub policy: ManagementPolicy,
    pub stop_pending: bool,
    pub last_stop_seq: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub seq: u64,
    pub timestamp: i64,
    pub expected_value: f64,
    pub intervene: u8,
    pub labels: BTreeMap<String, u8>,
}

/// Fleet state as of `seq`: a pure fold over log records plus the default
/// policy and machine list from config.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FleetSnapshot {
    pub seq: u64,
    pub default_policy: ManagementPolicy,
    pub policy_overrides: BTreeMap<String, ManagementPolicy>,
    pub machines: BTreeMap<String, MachineState>,
    #[serde(skip)]
    pub series: BTreeMap<String, Vec<SeriesPoint>>,
}

impl FleetSnapshot {
    pub fn new<I, S>(default_policy: ManagementPolicy, known_machines: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut s = Self {
            seq: 0,
            default_policy,
            policy_overrides: BTreeMap::new(),
            machines: BTreeMap::new(),
            series: BTreeMap::new(),
        };
        for m in known_machines {
            s.machine(&m.into());
        }
        s
    }

    pub fn replay<'a>(mut self, records: impl IntoIterator<Item = &'a EventRecord>) -> Self {
        for r in records {
            self.apply(r);
        }
        self
    }

    pub fn policy_for(&self, machine: &str) -> ManagementPolicy {
        self.policy_overrides.get(machine).copied().unwrap_or(self.default_policy)
    }

    fn machine(&mut self, id: &str) -> &mut MachineState {
        let policy = self.policy_for(id);
        self.machines.entry(id.to_string()).or_insert_with(|| MachineState {
            machine_id: id.to_string(),
            latest: None,
            latest_seq: None,
            sensor_labels: BTreeMap::new(),
            active_alerts: Vec::new(),
            policy,
            stop_pending: false,
            last_stop_seq: None,
        })
    }

    pub fn apply(&mut self, rec: &EventRecord) {
        self.seq = rec.seq;
        let p = &rec.payload;
        let str_field = |k: &str| p.get(k).and_then(|v| v.as_str()).map(str::to_string);
        match rec.kind {
            EventKind::Reading => {
                if let Some(m) = str_field("machine_id") {
                    self.machine(&m);
                }
            }
            EventKind::Estimate => {
                let Ok(est) = serde_json::from_value::<ConditionEstimate>(p.clone()) else { return };
                let policy = self.policy_for(&est.machine_id);
                let labels: BTreeMap<String, u8> = est.labels.iter().map(|l| (l.sensor_id.clone(), l.label)).collect();
                self.series.entry(est.machine_id.clone()).or_default().push(SeriesPoint {
                    seq: rec.seq,
                    timestamp: est.timestamp,
                    expected_value: est.expected_value,
                    intervene: est.intervene,
                    labels: labels.clone(),
                });
                let m = self.machine(&est.machine_id);
                m.sensor_labels = labels;
                m.latest_seq = Some(rec.seq);
                if classify_condition(est.expected_value, &policy) == 0 {
                    m.stop_pending = false;
                    m.active_alerts.clear();
                }
                m.latest = Some(est);
            }
            EventKind::Alert => {
                let Some(subject) = str_field("subject") else { return };
                if let Some(m) = self.machines.get_mut(&subject) {
                    m.active_alerts.push(AlertRef {
                        seq: rec.seq,
                        code: p.get("code").and_then(|v| v.as_i64()).unwrap_or_default(),
                        fired_by: str_field("fired_by").unwrap_or_default(),
                        timestamp: p.get("timestamp").and_then(|v| v.as_i64()).unwrap_or_default(),
                    });
                }
            }
            EventKind::Stop => {
                if let Some(id) = str_field("machine_id") {
                    let m = self.machine(&id);
                    m.stop_pending = true;
                    m.last_stop_seq = Some(rec.seq);
                }
            }
            EventKind::Policy => {
                let Ok(policy) = serde_json::from_value::<ManagementPolicy>(p.clone()) else { return };
                match str_field("machine_id") {
                    Some(id) => {
                        self.policy_overrides.insert(id.clone(), policy);
                        self.machine(&id).policy = policy;
                    }
                    None => {
                        self.default_policy = policy;
                        for (id, m) in self.machines.iter_mut() {
                            if !self.policy_overrides.contains_key(id) {
                                m.policy = policy;
                            }
                        }
                    }
                }
            }
            EventKind::Action => {}
        }
    }
}

/// Indices that keep at most `max` points: the series is cut into equal
/// consecutive buckets and the highest-E point of each survives (the first
/// one on ties).
pub fn downsample_max_e(points: &[SeriesPoint], max: usize) -> Vec<usize> {
    if points.len() <= max || max == 0 {
        return (0..points.len()).collect();
    }
    let bucket = points.len().div_ceil(max);
    (0..points.len())
        .step_by(bucket)
        .map(|start| {
            let end = (start + bucket).min(points.len());
            (start..end)
                .reduce(|best, i| {
                    if points[i].expected_value > points[best].expected_value {
                        i
                    } else {
                        best
                    }
                })
                .unwrap()
        })
        .collect()
}
