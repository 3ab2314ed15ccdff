use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::fact::Term;
use super::store::FactStore;
use super::KnowledgeError;

/// Inclusive time window `[from, to]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub from: i64,
    pub to: i64,
}

impl Window {
    pub fn all() -> Self {
        Self {
            from: i64::MIN,
            to: i64::MAX,
        }
    }

    pub fn contains(&self, ts: i64) -> bool {
        ts >= self.from && ts <= self.to
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum QueryResult {
    Number(Option<f64>),
    Entities(Vec<String>),
    Counts(BTreeMap<String, u64>),
    Averages(BTreeMap<String, Option<f64>>),
    Labels(BTreeMap<String, String>),
    Rows(Vec<BTreeMap<String, Value>>),
}

pub const COMPETENCY_QUERIES: [&str; 12] = [
    "avg_temperature_at_failure",
    "failures_by_humidity",
    "common_failure_type_by_condition",
    "failures_by_shift",
    "avg_criticality_by_temperature",
    "machines_in_error",
    "sensors_in_error",
    "co_occurring_error_patterns",
    "last_readings_before_maintenance",
    "maintenance_events_in_window",
    "machines_without_error",
    "avg_error_frequency_by_sensor_type",
];

const DEFAULT_HUMIDITY_SPLIT: f64 = 25.0;
const DEFAULT_TEMPERATURE_SPLIT: f64 = 35.0;

/// Work shift of a unix timestamp (UTC): morning 06-14, afternoon 14-22,
/// night otherwise.
pub fn shift_of(ts: i64) -> &'static str {
    let hour = ts.rem_euclid(86_400) / 3_600;
    match hour {
        6..=13 => "morning",
        14..=21 => "afternoon",
        _ => "night",
    }
}

fn param_f64(params: &Value, key: &str, default: f64) -> Result<f64, KnowledgeError> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(default),
        Some(v) => v
            .as_f64()
            .ok_or_else(|| KnowledgeError::InvalidParameter(format!("{key} must be a number"))),
    }
}

fn param_str<'a>(params: &'a Value, key: &str) -> Result<&'a str, KnowledgeError> {
    params
        .get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| KnowledgeError::InvalidParameter(format!("{key} is required")))
}

fn param_window(params: &Value) -> Result<Window, KnowledgeError> {
    let get = |k: &str, d: i64| -> Result<i64, KnowledgeError> {
        match params.get(k) {
            None | Some(Value::Null) => Ok(d),
            Some(v) => v
                .as_i64()
                .ok_or_else(|| KnowledgeError::InvalidParameter(format!("{k} must be an integer"))),
        }
    };
    let w = Window {
        from: get("from", i64::MIN)?,
        to: get("to", i64::MAX)?,
    };
    if w.from > w.to {
        return Err(KnowledgeError::InvalidParameter("from is after to".into()));
    }
    Ok(w)
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

struct FailureView {
    id: String,
    humidity: Option<f64>,
    temperature: Option<f64>,
    kind: Option<f64>,
    criticality: Option<f64>,
    timestamp: Option<f64>,
}

fn failures(store: &FactStore) -> Vec<FailureView> {
    store
        .instances("Failure")
        .map(|f| {
            let linked = |link: &str, value: &str| {
                store
                    .objects(f, link)
                    .filter_map(Term::as_entity)
                    .find_map(|e| store.number(e, value))
            };
            FailureView {
                id: f.to_string(),
                humidity: linked("hasHumidity", "humidityValue"),
                temperature: linked("hasTemperature", "temperatureValue"),
                kind: store.number(f, "typeOfFailure"),
                criticality: store.number(f, "criticality"),
                timestamp: store.number(f, "timestamp"),
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
struct ReadingView {
    machine: String,
    sensor: String,
    sensor_class: String,
    ts: i64,
    value: f64,
}

fn sensor_class(store: &FactStore, sensor: &str) -> String {
    store
        .objects(sensor, super::TYPE_PREDICATE)
        .filter_map(Term::as_entity)
        .find(|c| *c != "Sensor")
        .unwrap_or(sensor)
        .to_string()
}

/// Every labelled reading reachable from a machine, ordered by machine,
/// sensor, then time.
fn readings(store: &FactStore) -> Vec<ReadingView> {
    let mut out = Vec::new();
    for m in store.instances("Machine") {
        for s in store.objects(m, "hasSensor").filter_map(Term::as_entity) {
            let class = sensor_class(store, s);
            for r in store.objects(s, "generatesReading").filter_map(Term::as_entity) {
                let Some(ts) = store.number(r, "readingAt") else { continue };
                let value = store
                    .objects(r, "hasValue")
                    .filter_map(Term::as_entity)
                    .find_map(|v| store.number(v, "sensorReadingValue"));
                if let Some(value) = value {
                    out.push(ReadingView {
                        machine: m.to_string(),
                        sensor: s.to_string(),
                        sensor_class: class.clone(),
                        ts: ts as i64,
                        value,
                    });
                }
            }
        }
    }
    out.sort_by(|a, b| (&a.machine, &a.sensor, a.ts).cmp(&(&b.machine, &b.sensor, b.ts)));
    out
}

fn is_error(r: &ReadingView) -> bool {
    r.value == 1.0
}

/// Latest reading per (machine, sensor).
fn latest(readings: &[ReadingView]) -> BTreeMap<(&str, &str), &ReadingView> {
    let mut out: BTreeMap<(&str, &str), &ReadingView> = BTreeMap::new();
    for r in readings {
        let e = out.entry((r.machine.as_str(), r.sensor.as_str())).or_insert(r);
        if r.ts >= e.ts {
            *e = r;
        }
    }
    out
}

/// Number of out-of-range readings per requested sensor id within `window`,
/// across all machines. Requested sensors with no errors report zero.
pub fn count_failures_by_sensor(store: &FactStore, sensors: &[&str], window: Window) -> BTreeMap<String, u64> {
    let mut out: BTreeMap<String, u64> = sensors.iter().map(|s| (s.to_string(), 0)).collect();
    for r in readings(store) {
        if !is_error(&r) || !window.contains(r.ts) {
            continue;
        }
        if let Some(n) = out.get_mut(&r.sensor_class) {
            *n += 1;
        }
    }
    out
}

struct MaintenanceView {
    machine: String,
    ts: i64,
    caused_by_error: bool,
    id: String,
}

fn maintenance_events(store: &FactStore) -> Vec<MaintenanceView> {
    let mut out: Vec<MaintenanceView> = store
        .instances("MaintenanceEvent")
        .filter_map(|e| {
            let machine = store.object(e, "maintenanceOf")?.as_entity()?.to_string();
            let ts = store.number(e, "maintenanceAt")? as i64;
            Some(MaintenanceView {
                machine,
                ts,
                caused_by_error: store.number(e, "causedByError") == Some(1.0),
                id: e.to_string(),
            })
        })
        .collect();
    out.sort_by(|a, b| (a.ts, &a.machine).cmp(&(b.ts, &b.machine)));
    out
}

fn split_label(value: f64, split: f64, low: &str, high: &str) -> String {
    if value <= split { low } else { high }.to_string()
}

/// Answers one of the [`COMPETENCY_QUERIES`].
///
/// Parameters (JSON object, all optional unless noted):
/// `humidity_split`, `temperature_split` for the furnace queries;
/// `machine` (required for `sensors_in_error` and
/// `last_readings_before_maintenance`); `from`/`to` for windowed queries.
pub fn answer_competency_query(store: &FactStore, id: &str, params: &Value) -> Result<QueryResult, KnowledgeError> {
    let hsplit = param_f64(params, "humidity_split", DEFAULT_HUMIDITY_SPLIT)?;
    let tsplit = param_f64(params, "temperature_split", DEFAULT_TEMPERATURE_SPLIT)?;
    match id {
        "avg_temperature_at_failure" => {
            let temps: Vec<f64> = failures(store).iter().filter_map(|f| f.temperature).collect();
            Ok(QueryResult::Number(mean(&temps)))
        }
        "failures_by_humidity" => {
            let mut counts: BTreeMap<String, u64> = [("high".to_string(), 0), ("low".to_string(), 0)].into();
            for f in failures(store) {
                if let Some(h) = f.humidity {
                    *counts.entry(split_label(h, hsplit, "low", "high")).or_default() += 1;
                }
            }
            Ok(QueryResult::Counts(counts))
        }
        "common_failure_type_by_condition" => {
            let mut tallies: BTreeMap<String, BTreeMap<i64, u64>> = BTreeMap::new();
            for f in failures(store) {
                let (Some(h), Some(t), Some(k)) = (f.humidity, f.temperature, f.kind) else { continue };
                let cond = format!(
                    "{}_humidity/{}_temperature",
                    split_label(h, hsplit, "low", "high"),
                    if t >= tsplit { "high" } else { "low" }
                );
                *tallies.entry(cond).or_default().entry(k as i64).or_default() += 1;
            }
            // Ties go to the smaller failure type.
            let out = tallies
                .into_iter()
                .map(|(cond, t)| {
                    let best = t
                        .iter()
                        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                        .map(|(k, _)| k.to_string())
                        .unwrap_or_default();
                    (cond, best)
                })
                .collect();
            Ok(QueryResult::Labels(out))
        }
        "failures_by_shift" => {
            let mut counts: BTreeMap<String, u64> =
                ["morning", "afternoon", "night"].iter().map(|s| (s.to_string(), 0)).collect();
            for f in failures(store) {
                let shift = store
                    .object(&f.id, "duringShift")
                    .and_then(Term::as_entity)
                    .map(str::to_string)
                    .or_else(|| f.timestamp.map(|t| shift_of(t as i64).to_string()));
                if let Some(s) = shift {
                    *counts.entry(s).or_default() += 1;
                }
            }
            Ok(QueryResult::Counts(counts))
        }
        "avg_criticality_by_temperature" => {
            let mut high = Vec::new();
            let mut low = Vec::new();
            for f in failures(store) {
                if let (Some(t), Some(c)) = (f.temperature, f.criticality) {
                    if t >= tsplit { &mut high } else { &mut low }.push(c);
                }
            }
            Ok(QueryResult::Averages(
                [("high".to_string(), mean(&high)), ("low".to_string(), mean(&low))].into(),
            ))
        }
        "machines_in_error" => {
            let rs = readings(store);
            let set: BTreeSet<String> = latest(&rs)
                .values()
                .filter(|r| is_error(r))
                .map(|r| r.machine.clone())
                .collect();
            Ok(QueryResult::Entities(set.into_iter().collect()))
        }
        "sensors_in_error" => {
            let machine = param_str(params, "machine")?;
            let rs = readings(store);
            let set: BTreeSet<String> = latest(&rs)
                .values()
                .filter(|r| r.machine == machine && is_error(r))
                .map(|r| r.sensor_class.clone())
                .collect();
            Ok(QueryResult::Entities(set.into_iter().collect()))
        }
        "co_occurring_error_patterns" => {
            let w = param_window(params)?;
            let mut at: BTreeMap<(String, i64), BTreeSet<String>> = BTreeMap::new();
            for r in readings(store).into_iter().filter(|r| is_error(r) && w.contains(r.ts)) {
                at.entry((r.machine, r.ts)).or_default().insert(r.sensor_class);
            }
            let mut patterns: BTreeMap<Vec<String>, BTreeSet<String>> = BTreeMap::new();
            for ((machine, _), sensors) in at {
                if sensors.len() >= 2 {
                    patterns.entry(sensors.into_iter().collect()).or_default().insert(machine);
                }
            }
            let rows = patterns
                .into_iter()
                .filter(|(_, ms)| ms.len() >= 2)
                .map(|(p, ms)| {
                    BTreeMap::from([
                        ("pattern".to_string(), Value::from(p)),
                        ("machines".to_string(), Value::from(ms.into_iter().collect::<Vec<_>>())),
                    ])
                })
                .collect();
            Ok(QueryResult::Rows(rows))
        }
        "last_readings_before_maintenance" => {
            let machine = param_str(params, "machine")?;
            let rs = readings(store);
            let mut rows = Vec::new();
            for ev in maintenance_events(store).into_iter().filter(|e| e.machine == machine) {
                let mut last: BTreeMap<&str, &ReadingView> = BTreeMap::new();
                for r in rs.iter().filter(|r| r.machine == machine && r.ts <= ev.ts) {
                    last.insert(r.sensor_class.as_str(), r);
                }
                for (sensor, r) in last {
                    rows.push(BTreeMap::from([
                        ("event".to_string(), Value::from(ev.id.clone())),
                        ("sensor".to_string(), Value::from(sensor)),
                        ("ts".to_string(), Value::from(r.ts)),
                        ("value".to_string(), Value::from(r.value)),
                    ]));
                }
            }
            Ok(QueryResult::Rows(rows))
        }
        "maintenance_events_in_window" => {
            let w = param_window(params)?;
            let rows = maintenance_events(store)
                .into_iter()
                .filter(|e| e.caused_by_error && w.contains(e.ts))
                .map(|e| {
                    BTreeMap::from([
                        ("event".to_string(), Value::from(e.id)),
                        ("machine".to_string(), Value::from(e.machine)),
                        ("ts".to_string(), Value::from(e.ts)),
                    ])
                })
                .collect();
            Ok(QueryResult::Rows(rows))
        }
        "machines_without_error" => {
            let w = param_window(params)?;
            let erring: BTreeSet<String> = readings(store)
                .into_iter()
                .filter(|r| is_error(r) && w.contains(r.ts))
                .map(|r| r.machine)
                .collect();
            let out = store
                .instances("Machine")
                .filter(|m| !erring.contains(*m))
                .map(str::to_string)
                .collect();
            Ok(QueryResult::Entities(out))
        }
        "avg_error_frequency_by_sensor_type" => {
            let w = param_window(params)?;
            let mut per_sensor: BTreeMap<(String, String), (u64, u64)> = BTreeMap::new();
            for r in readings(store).into_iter().filter(|r| w.contains(r.ts)) {
                let e = per_sensor.entry((r.sensor_class.clone(), r.sensor.clone())).or_default();
                e.1 += 1;
                if is_error(&r) {
                    e.0 += 1;
                }
            }
            let mut by_class: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for ((class, _), (errors, total)) in per_sensor {
                by_class.entry(class).or_default().push(errors as f64 / total as f64);
            }
            Ok(QueryResult::Averages(
                by_class.into_iter().map(|(k, v)| (k, mean(&v))).collect(),
            ))
        }
        other => Err(KnowledgeError::UnknownQuery(other.to_string())),
    }
}
