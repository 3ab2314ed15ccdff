//! Knowledge base: a typed fact store, rule files, forward-chaining
//! inference with provenance, and the named competency queries.

mod engine;
mod fact;
mod queries;
mod rule;
mod store;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use engine::{
    provenance_holds, run_inference, run_inference_with, Alert, InferenceOptions, InferenceResult, InferredFact,
    ALERT_PREDICATE, DEFAULT_MAX_ITERATIONS,
};
pub use fact::{Fact, Term, TYPE_PREDICATE};
pub use queries::{answer_competency_query, count_failures_by_sensor, shift_of, QueryResult, Window, COMPETENCY_QUERIES};
pub use rule::{
    sensor_equipment_rules, smart_maintenance_rules, Arg, Atom, BuiltinOp, Rule, RuleSet, RULES_FORMAT_VERSION,
};
pub use store::{FactMeta, FactStore, Provenance, Schema, Snapshot, SNAPSHOT_FORMAT_VERSION};

use crate::ingest::FailureRecord;
use crate::labeler::ConditionEstimate;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KnowledgeError {
    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("invalid fact: {0}")]
    InvalidFact(String),
    #[error("invalid rule `{rule}`: {reason}")]
    InvalidRule { rule: String, reason: String },
    #[error("inference did not reach a fixpoint within {0} iterations")]
    NonTermination(usize),
    #[error("unknown competency query `{0}`")]
    UnknownQuery(String),
    #[error("invalid query parameter: {0}")]
    InvalidParameter(String),
    #[error("io: {0}")]
    Io(String),
}

/// One furnace failure and its environmental context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureInstance {
    pub failure_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub machine_id: Option<String>,
    pub type_of_failure: i64,
    pub number_of_occurrences: i64,
    pub temperature: f64,
    pub humidity: f64,
    pub criticality: f64,
    pub timestamp: i64,
}

impl FailureInstance {
    pub fn facts(&self) -> Vec<Fact> {
        let f = &self.failure_id;
        let h = format!("{f}/humidity");
        let t = format!("{f}/temperature");
        let mut out = vec![
            Fact::class(f.as_str(), "Failure"),
            Fact::new(f.as_str(), "typeOfFailure", self.type_of_failure),
            Fact::new(f.as_str(), "numberOfOccurrences", self.number_of_occurrences),
            Fact::new(f.as_str(), "criticality", self.criticality),
            Fact::new(f.as_str(), "timestamp", self.timestamp),
            Fact::new(f.as_str(), "duringShift", Term::entity(shift_of(self.timestamp))),
            Fact::new(f.as_str(), "hasHumidity", Term::entity(h.clone())),
            Fact::class(h.as_str(), "Humidity"),
            Fact::new(h.as_str(), "humidityValue", self.humidity),
            Fact::new(f.as_str(), "hasTemperature", Term::entity(t.clone())),
            Fact::class(t.as_str(), "Temperature"),
            Fact::new(t.as_str(), "temperatureValue", self.temperature),
        ];
        if let Some(m) = &self.machine_id {
            out.push(Fact::class(m.as_str(), "Machine"));
            out.push(Fact::new(f.as_str(), "occursOn", Term::entity(m.clone())));
        }
        out
    }
}

/// Converts failure records in file order, numbering occurrences of the same
/// failure type on the same machine cumulatively.
pub fn failure_instances(records: &[FailureRecord]) -> Vec<FailureInstance> {
    let mut seen: BTreeMap<(i64, i64), i64> = BTreeMap::new();
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let n = seen.entry((r.machine_id, r.type_of_failure)).or_insert(0);
            *n += 1;
            FailureInstance {
                failure_id: format!("failure-{i}"),
                machine_id: Some(format!("machine-{}", r.machine_id)),
                type_of_failure: r.type_of_failure,
                number_of_occurrences: *n,
                temperature: r.temp as f64,
                humidity: r.humid as f64,
                criticality: r.criticality,
                timestamp: r.timestamp,
            }
        })
        .collect()
}

pub fn sensor_entity(machine: &str, sensor: &str) -> String {
    format!("{machine}/{sensor}")
}

pub fn reading_entity(machine: &str, sensor: &str, ts: i64) -> String {
    format!("{machine}/{sensor}@{ts}")
}

/// Facts declaring a machine and its sensors. The sensor id doubles as the
/// sensor's class.
pub fn machine_facts<'a>(machine: &str, sensors: impl IntoIterator<Item = &'a str>) -> Vec<Fact> {
    let mut out = vec![Fact::class(machine, "Machine")];
    for s in sensors {
        let e = sensor_entity(machine, s);
        out.push(Fact::new(machine, "hasSensor", Term::entity(e.clone())));
        out.push(Fact::class(e.as_str(), "Sensor"));
        out.push(Fact::class(e.as_str(), s));
    }
    out
}

/// Facts for one labelled reading (label 1 means out of range).
pub fn reading_facts(machine: &str, sensor: &str, ts: i64, label: u8) -> Vec<Fact> {
    let s = sensor_entity(machine, sensor);
    let r = reading_entity(machine, sensor, ts);
    let v = format!("{r}/value");
    vec![
        Fact::new(s.as_str(), "generatesReading", Term::entity(r.clone())),
        Fact::class(r.as_str(), "SensorReading"),
        Fact::new(r.as_str(), "readingAt", ts),
        Fact::new(r.as_str(), "hasValue", Term::entity(v.clone())),
        Fact::class(v.as_str(), "SensorValue"),
        Fact::new(v.as_str(), "sensorReadingValue", label as i64),
    ]
}

pub fn estimate_facts(estimate: &ConditionEstimate) -> Vec<Fact> {
    let mut out = machine_facts(
        &estimate.machine_id,
        estimate.labels.iter().map(|l| l.sensor_id.as_str()),
    );
    for l in &estimate.labels {
        out.extend(reading_facts(&estimate.machine_id, &l.sensor_id, estimate.timestamp, l.label));
    }
    out
}

/// Facts for a maintenance event on `machine` at `ts`.
pub fn maintenance_facts(machine: &str, ts: i64, caused_by_error: bool) -> Vec<Fact> {
    let e = format!("{machine}/maintenance@{ts}");
    vec![
        Fact::class(machine, "Machine"),
        Fact::class(e.as_str(), "MaintenanceEvent"),
        Fact::new(e.as_str(), "maintenanceOf", Term::entity(machine)),
        Fact::new(e.as_str(), "maintenanceAt", ts),
        Fact::new(e.as_str(), "causedByError", caused_by_error as i64),
    ]
}

/// Asserts the estimate's readings and runs the maintenance rules. Alerts
/// without their own timestamp take the estimate's.
pub fn eval_maintenance_rules(
    store: &mut FactStore,
    rules: &RuleSet,
    estimate: &ConditionEstimate,
) -> Result<Vec<Alert>, KnowledgeError> {
    store.extend_schema(&rules.schema);
    store.assert_all(estimate_facts(estimate))?;
    let opts = InferenceOptions {
        now: estimate.timestamp,
        ..InferenceOptions::default()
    };
    Ok(run_inference_with(store, rules, opts)?.alerts)
}
