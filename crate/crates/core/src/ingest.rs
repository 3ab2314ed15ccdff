//! Telemetry acquisition: CSV row parsing for the two supported dataset
//! layouts, topic-based subscription, and paced file replay.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("malformed row: expected {expected} fields, found {found}")]
    MalformedRow { expected: usize, found: usize },
    #[error("column `{column}`: {reason}")]
    TypeError { column: String, reason: String },
    #[error("header is missing required column `{0}`")]
    MissingColumn(String),
    #[error("column `{0}` does not map to a configured sensor")]
    UnknownSensor(String),
    #[error("invalid reading: {0}")]
    InvalidReading(String),
    #[error("topic `{0}` does not match route pattern")]
    TopicMismatch(String),
    #[error("payload decode failed: {0}")]
    PayloadDecode(String),
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("connection lost")]
    ConnectionLost,
}

/// One timestamped value from one sensor on one machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    pub machine_id: String,
    pub sensor_id: String,
    pub timestamp: i64,
    pub value: f64,
}

impl SensorReading {
    pub fn new(
        machine_id: impl Into<String>,
        sensor_id: impl Into<String>,
        timestamp: i64,
        value: f64,
    ) -> Result<Self, IngestError> {
        let reading = Self {
            machine_id: machine_id.into(),
            sensor_id: sensor_id.into(),
            timestamp,
            value,
        };
        reading.validate()?;
        Ok(reading)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.timestamp < 0 {
            return Err(IngestError::InvalidReading(format!(
                "negative timestamp {}",
                self.timestamp
            )));
        }
        if !self.value.is_finite() {
            return Err(IngestError::InvalidReading(format!(
                "non-finite value {}",
                self.value
            )));
        }
        if self.sensor_id.is_empty() {
            return Err(IngestError::InvalidReading("empty sensor id".into()));
        }
        Ok(())
    }
}

pub fn split_csv_line(line: &str) -> Result<Vec<String>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(line.as_bytes());
    match reader.records().next() {
        Some(Ok(rec)) => Ok(rec.iter().map(|f| f.trim().to_string()).collect()),
        Some(Err(e)) => Err(IngestError::PayloadDecode(e.to_string())),
        None => Ok(Vec::new()),
    }
}

/// Splits a CSV header line into column names.
pub fn parse_header(line: &str) -> Result<Vec<String>, IngestError> {
    split_csv_line(line.trim_start_matches('\u{feff}'))
}

fn parse_int(column: &str, raw: &str) -> Result<i64, IngestError> {
    raw.parse::<i64>().map_err(|_| IngestError::TypeError {
        column: column.to_string(),
        reason: format!("`{raw}` is not an integer"),
    })
}

fn parse_real(column: &str, raw: &str) -> Result<f64, IngestError> {
    let v = raw.parse::<f64>().map_err(|_| IngestError::TypeError {
        column: column.to_string(),
        reason: format!("`{raw}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(IngestError::TypeError {
            column: column.to_string(),
            reason: format!("`{raw}` is not finite"),
        });
    }
    Ok(v)
}

// ---------------------------------------------------------------------------
// Failure-record layout (textile machines)
// ---------------------------------------------------------------------------

pub const CS1_COLUMNS: [&str; 9] = [
    "machine_id",
    "type_of_failure",
    "timestamp",
    "time_repair",
    "cost",
    "criticality",
    "humid",
    "temp",
    "label",
];

/// A historical failure event with environment readings and a criticality label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub machine_id: i64,
    pub type_of_failure: i64,
    pub timestamp: i64,
    pub time_repair: f64,
    pub cost: f64,
    pub criticality: f64,
    pub humid: i64,
    pub temp: i64,
    pub label: u8,
    /// Columns outside the fixed layout, keyed by header name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extras: BTreeMap<String, String>,
}

pub fn is_cs1_header(header: &[String]) -> bool {
    CS1_COLUMNS.iter().all(|c| header.iter().any(|h| h == c))
}

pub fn parse_cs1_row(line: &str, header: &[String]) -> Result<FailureRecord, IngestError> {
    for col in CS1_COLUMNS {
        if !header.iter().any(|h| h == col) {
            return Err(IngestError::MissingColumn(col.to_string()));
        }
    }
    let fields = split_csv_line(line)?;
    if fields.len() != header.len() {
        return Err(IngestError::MalformedRow {
            expected: header.len(),
            found: fields.len(),
        });
    }
    let mut known: HashMap<&str, &str> = HashMap::new();
    let mut extras = BTreeMap::new();
    for (name, raw) in header.iter().zip(fields.iter()) {
        if CS1_COLUMNS.contains(&name.as_str()) {
            known.insert(name.as_str(), raw.as_str());
        } else {
            extras.insert(name.clone(), raw.clone());
        }
    }
    let int = |c: &str| parse_int(c, known[c]);
    let real = |c: &str| parse_real(c, known[c]);

    let humid = int("humid")?;
    if !(0..=100).contains(&humid) {
        return Err(IngestError::TypeError {
            column: "humid".into(),
            reason: format!("{humid} outside [0, 100]"),
        });
    }
    let label = match int("label")? {
        0 => 0,
        1 => 1,
        other => {
            return Err(IngestError::TypeError {
                column: "label".into(),
                reason: format!("{other} is not a binary label"),
            })
        }
    };
    let timestamp = int("timestamp")?;
    if timestamp < 0 {
        return Err(IngestError::TypeError {
            column: "timestamp".into(),
            reason: "negative timestamp".into(),
        });
    }
    Ok(FailureRecord {
        machine_id: int("machine_id")?,
        type_of_failure: int("type_of_failure")?,
        timestamp,
        time_repair: real("time_repair")?,
        cost: real("cost")?,
        criticality: real("criticality")?,
        humid,
        temp: int("temp")?,
        label,
        extras,
    })
}

impl FailureRecord {
    /// Renders the record as a CSV row in `header` order.
    pub fn to_csv_row(&self, header: &[String]) -> String {
        header
            .iter()
            .map(|h| match h.as_str() {
                "machine_id" => self.machine_id.to_string(),
                "type_of_failure" => self.type_of_failure.to_string(),
                "timestamp" => self.timestamp.to_string(),
                "time_repair" => self.time_repair.to_string(),
                "cost" => self.cost.to_string(),
                "criticality" => self.criticality.to_string(),
                "humid" => self.humid.to_string(),
                "temp" => self.temp.to_string(),
                "label" => self.label.to_string(),
                other => self.extras.get(other).cloned().unwrap_or_default(),
            })
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Environment readings carried by the record, as `humid` and `temp` sensors.
    pub fn readings(&self) -> Vec<SensorReading> {
        let machine = self.machine_id.to_string();
        vec![
            SensorReading {
                machine_id: machine.clone(),
                sensor_id: "humid".into(),
                timestamp: self.timestamp,
                value: self.humid as f64,
            },
            SensorReading {
                machine_id: machine,
                sensor_id: "temp".into(),
                timestamp: self.timestamp,
                value: self.temp as f64,
            },
        ]
    }
}

// ---------------------------------------------------------------------------
// Sensor-matrix layout (furnace vibration sensors)
// ---------------------------------------------------------------------------

/// Resolves column names like `2F03_COLISÃO_S3` to a (machine, sensor) pair.
///
/// Lookup order: full column name override, then the middle name segment,
/// then an `S<digits>` suffix. When `known_sensors` is non-empty the resolved
/// id must be one of them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SensorMap {
    #[serde(default)]
    pub overrides: BTreeMap<String, String>,
    #[serde(default)]
    pub known_sensors: Vec<String>,
}

impl SensorMap {
    /// Name map for the seven furnace sensors as they appear in plant exports.
    pub fn furnace_defaults() -> Self {
        let overrides = [
            ("VIBRAÇÃO_GLOBAL", "S1"),
            ("COLISÃO", "S2"),
            ("DESBALANCEAMENTO", "S3"),
            ("REDE", "S4"),
            ("ROLAMENTO_1", "S5"),
            ("ROLAMENTO_2", "S6"),
            ("ROLAMENTO_3", "S7"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        Self {
            overrides,
            known_sensors: Vec::new(),
        }
    }

    pub fn with_known_sensors(mut self, sensors: impl IntoIterator<Item = String>) -> Self {
        self.known_sensors = sensors.into_iter().collect();
        self
    }

    pub fn resolve(&self, column: &str) -> Result<(String, String), IngestError> {
        let unknown = || IngestError::UnknownSensor(column.to_string());
        let (machine, rest) = column.split_once('_').ok_or_else(unknown)?;
        if machine.is_empty() {
            return Err(unknown());
        }
        let (middle, suffix) = match rest.rsplit_once('_') {
            Some((m, s)) if is_sensor_code(s) => (m, Some(s)),
            _ if is_sensor_code(rest) => ("", Some(rest)),
            _ => (rest, None),
        };
        let sensor = self
            .overrides
            .get(column)
            .or_else(|| self.overrides.get(middle))
            .or_else(|| self.overrides.get(rest))
            .cloned()
            .or_else(|| suffix.map(str::to_string))
            .ok_or_else(unknown)?;
        if !self.known_sensors.is_empty() && !self.known_sensors.contains(&sensor) {
            return Err(unknown());
        }
        Ok((machine.to_string(), sensor))
    }
}

fn is_sensor_code(s: &str) -> bool {
    s.len() >= 2 && s.starts_with('S') && s[1..].bytes().all(|b| b.is_ascii_digit())
}

#[derive(Debug, Clone, PartialEq)]
enum Cs2Column {
    Sensor { machine: String, sensor: String },
    Label,
    Timestamp,
    Index,
}

/// Column roles for a sensor-matrix CSV, resolved once from the header.
#[derive(Debug, Clone)]
pub struct Cs2Layout {
    columns: Vec<Cs2Column>,
}

impl Cs2Layout {
    pub fn from_header(header: &[String], map: &SensorMap) -> Result<Self, IngestError> {
        let mut columns = Vec::with_capacity(header.len());
        for name in header {
            let col = match name.as_str() {
                "label" => Cs2Column::Label,
                "timestamp" | "ts" => Cs2Column::Timestamp,
                "" | "index" => Cs2Column::Index,
                other => {
                    let (machine, sensor) = map.resolve(other)?;
                    Cs2Column::Sensor { machine, sensor }
                }
            };
            columns.push(col);
        }
        Ok(Self { columns })
    }

    pub fn sensor_count(&self) -> usize {
        self.columns
            .iter()
            .filter(|c| matches!(c, Cs2Column::Sensor { .. }))
            .count()
    }

    pub fn has_label(&self) -> bool {
        self.columns.contains(&Cs2Column::Label)
    }

    /// (machine, sensor) pairs in column order.
    pub fn sensors(&self) -> Vec<(String, String)> {
        self.columns
            .iter()
            .filter_map(|c| match c {
                Cs2Column::Sensor { machine, sensor } => Some((machine.clone(), sensor.clone())),
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cs2Row {
    pub readings: Vec<SensorReading>,
    pub label: Option<u8>,
}

/// Parses one sensor-matrix row. `row_index` becomes the timestamp when the
/// file carries neither a timestamp nor an index column.
pub fn parse_cs2_row(line: &str, layout: &Cs2Layout, row_index: i64) -> Result<Cs2Row, IngestError> {
    let fields = split_csv_line(line)?;
    if fields.len() != layout.columns.len() {
        return Err(IngestError::MalformedRow {
            expected: layout.columns.len(),
            found: fields.len(),
        });
    }
    let mut timestamp = None;
    let mut index = None;
    let mut label = None;
    for (col, raw) in layout.columns.iter().zip(fields.iter()) {
        match col {
            Cs2Column::Timestamp => timestamp = Some(parse_int("timestamp", raw)?),
            Cs2Column::Index => index = Some(parse_int("index", raw)?),
            Cs2Column::Label => {
                label = Some(match parse_int("label", raw)? {
                    0 => 0,
                    1 => 1,
                    other => {
                        return Err(IngestError::TypeError {
                            column: "label".into(),
                            reason: format!("{other} is not a binary label"),
                        })
                    }
                })
            }
            Cs2Column::Sensor { .. } => {}
        }
    }
    let ts = timestamp.or(index).unwrap_or(row_index);
    let mut readings = Vec::with_capacity(layout.sensor_count());
    for (col, raw) in layout.columns.iter().zip(fields.iter()) {
        if let Cs2Column::Sensor { machine, sensor } = col {
            let value = parse_real(&format!("{machine}_{sensor}"), raw)?;
            let reading = SensorReading::new(machine.clone(), sensor.clone(), ts, value)
                .map_err(|e| IngestError::TypeError {
                    column: sensor.clone(),
                    reason: e.to_string(),
                })?;
            readings.push(reading);
        }
    }
    Ok(Cs2Row { readings, label })
}

// ---------------------------------------------------------------------------
// Topic routing and subscription
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PayloadFormat {
    Json,
    CsvLine,
}

/// Maps topics such as `plant/m1/S1` onto machine and sensor ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicRoute {
    pub pattern: String,
    pub payload_format: PayloadFormat,
}

impl Default for TopicRoute {
    fn default() -> Self {
        Self {
            pattern: "plant/{machine}/{sensor}".into(),
            payload_format: PayloadFormat::Json,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonPayload {
    ts: i64,
    value: f64,
}

impl TopicRoute {
    pub fn new(pattern: impl Into<String>, payload_format: PayloadFormat) -> Result<Self, IngestError> {
        let route = Self {
            pattern: pattern.into(),
            payload_format,
        };
        let segs: Vec<&str> = route.pattern.split('/').collect();
        if !segs.contains(&"{machine}") || !segs.contains(&"{sensor}") {
            return Err(IngestError::TopicMismatch(route.pattern));
        }
        Ok(route)
    }

    /// Subscription filter that covers every topic this route can decode.
    pub fn wildcard_filter(&self) -> String {
        self.pattern
            .split('/')
            .map(|s| if s.starts_with('{') { "+" } else { s })
            .collect::<Vec<_>>()
            .join("/")
    }

    pub fn topic_for(&self, machine: &str, sensor: &str) -> String {
        self.pattern
            .replace("{machine}", machine)
            .replace("{sensor}", sensor)
    }

    pub fn match_topic(&self, topic: &str) -> Option<(String, String)> {
        let pat: Vec<&str> = self.pattern.split('/').collect();
        let segs: Vec<&str> = topic.split('/').collect();
        if pat.len() != segs.len() {
            return None;
        }
        let (mut machine, mut sensor) = (None, None);
        for (p, s) in pat.iter().zip(segs.iter()) {
            match *p {
                "{machine}" => machine = Some(s.to_string()),
                "{sensor}" => sensor = Some(s.to_string()),
                lit if lit == *s => {}
                _ => return None,
            }
        }
        Some((machine?, sensor?))
    }

    pub fn decode(&self, topic: &str, payload: &[u8]) -> Result<SensorReading, IngestError> {
        let (machine, sensor) = self
            .match_topic(topic)
            .ok_or_else(|| IngestError::TopicMismatch(topic.to_string()))?;
        let text = std::str::from_utf8(payload)
            .map_err(|e| IngestError::PayloadDecode(e.to_string()))?;
        let (ts, value) = match self.payload_format {
            PayloadFormat::Json => {
                let p: JsonPayload = serde_json::from_str(text)
                    .map_err(|e| IngestError::PayloadDecode(e.to_string()))?;
                (p.ts, p.value)
            }
            PayloadFormat::CsvLine => {
                let (a, b) = text
                    .trim()
                    .split_once(',')
                    .ok_or_else(|| IngestError::PayloadDecode(format!("`{text}`")))?;
                let ts = a
                    .trim()
                    .parse()
                    .map_err(|_| IngestError::PayloadDecode(format!("bad ts `{a}`")))?;
                let value = b
                    .trim()
                    .parse()
                    .map_err(|_| IngestError::PayloadDecode(format!("bad value `{b}`")))?;
                (ts, value)
            }
        };
        SensorReading::new(machine, sensor, ts, value)
            .map_err(|e| IngestError::PayloadDecode(e.to_string()))
    }

    pub fn encode(&self, reading: &SensorReading) -> (String, Vec<u8>) {
        let topic = self.topic_for(&reading.machine_id, &reading.sensor_id);
        let payload = match self.payload_format {
            PayloadFormat::Json => serde_json::to_vec(&JsonPayload {
                ts: reading.timestamp,
                value: reading.value,
            })
            .expect("payload serializes"),
            PayloadFormat::CsvLine => format!("{},{}", reading.timestamp, reading.value).into_bytes(),
        };
        (topic, payload)
    }
}

/// MQTT-style topic filter matching with `+` and `#` wildcards.
pub fn topic_matches(filter: &str, topic: &str) -> bool {
    let mut f = filter.split('/');
    let mut t = topic.split('/');
    loop {
        match (f.next(), t.next()) {
            (Some("#"), _) => return true,
            (Some("+"), Some(_)) => {}
            (Some(a), Some(b)) if a == b => {}
            (None, None) => return true,
            _ => return false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BusMessage {
    pub topic: String,
    pub payload: Vec<u8>,
}

struct BusSubscriber {
    filter: String,
    tx: Sender<BusMessage>,
}

/// In-process publish/subscribe bus with MQTT QoS 0 semantics.
///
/// Each subscriber receives matching messages in publish order. `close`
/// disconnects every subscriber, which they observe as a lost connection.
#[derive(Clone, Default)]
pub struct InProcBus {
    subscribers: Arc<Mutex<Vec<BusSubscriber>>>,
}

impl InProcBus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn publish(&self, topic: &str, payload: &[u8]) {
        let mut subs = self.subscribers.lock().expect("bus lock poisoned");
        subs.retain(|s| {
            if !topic_matches(&s.filter, topic) {
                return true;
            }
            s.tx.send(BusMessage {
                topic: topic.to_string(),
                payload: payload.to_vec(),
            })
            .is_ok()
        });
    }

    pub fn subscribe_raw(&self, filter: &str) -> Receiver<BusMessage> {
        let (tx, rx) = mpsc::channel();
        self.subscribers
            .lock()
            .expect("bus lock poisoned")
            .push(BusSubscriber {
                filter: filter.to_string(),
                tx,
            });
        rx
    }

    pub fn close(&self) {
        self.subscribers.lock().expect("bus lock poisoned").clear();
    }
}

/// Decoded reading stream over a bus subscription.
///
/// Undecodable payloads are dropped and counted. Command topics (last
/// segment `cmd`) are skipped. A disconnected bus yields one
/// `ConnectionLost` error and then ends.
pub struct Subscription {
    route: TopicRoute,
    rx: Receiver<BusMessage>,
    dropped: Arc<AtomicU64>,
    finished: bool,
    idle_timeout: Option<Duration>,
}

impl Subscription {
    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }

    pub fn dropped_counter(&self) -> Arc<AtomicU64> {
        Arc::clone(&self.dropped)
    }

    /// Ends the stream (without error) once no message arrives for `timeout`.
    pub fn with_idle_timeout(mut self, timeout: Duration) -> Self {
        self.idle_timeout = Some(timeout);
        self
    }
}

impl Iterator for Subscription {
    type Item = Result<SensorReading, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.finished {
            return None;
        }
        loop {
            let msg = match self.idle_timeout {
                Some(t) => match self.rx.recv_timeout(t) {
                    Ok(m) => m,
                    Err(RecvTimeoutError::Timeout) => {
                        self.finished = true;
                        return None;
                    }
                    Err(RecvTimeoutError::Disconnected) => {
                        self.finished = true;
                        return Some(Err(IngestError::ConnectionLost));
                    }
                },
                None => match self.rx.recv() {
                    Ok(m) => m,
                    Err(_) => {
                        self.finished = true;
                        return Some(Err(IngestError::ConnectionLost));
                    }
                },
            };
            if msg.topic.rsplit('/').next() == Some("cmd") {
                continue;
            }
            match self.route.decode(&msg.topic, &msg.payload) {
                Ok(r) => return Some(Ok(r)),
                Err(e) => {
                    self.dropped.fetch_add(1, Ordering::Relaxed);
                    tracing::warn!(topic = %msg.topic, error = %e, "dropping undecodable payload");
                }
            }
        }
    }
}

pub fn subscribe(bus: &InProcBus, route: &TopicRoute, topic_filter: &str) -> Subscription {
    Subscription {
        route: route.clone(),
        rx: bus.subscribe_raw(topic_filter),
        dropped: Arc::new(AtomicU64::new(0)),
        finished: false,
        idle_timeout: None,
    }
}

// ---------------------------------------------------------------------------
// File replay
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReplaySpeed {
    /// No pacing delays.
    Max,
    /// Wall-clock seconds per timestamp second are divided by the multiplier.
    Multiplier(f64),
}

impl std::str::FromStr for ReplaySpeed {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("max") {
            return Ok(ReplaySpeed::Max);
        }
        match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(ReplaySpeed::Multiplier(v)),
            _ => Err(format!("speed must be a positive number or `max`, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedRow {
    /// 1-based data row number (header excluded).
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ReplayReport {
    pub rows_read: usize,
    pub readings_emitted: usize,
    pub skipped: Vec<SkippedRow>,
}

enum Layout {
    Cs1(Vec<String>),
    Cs2(Cs2Layout),
}

/// Paced reading stream over a CSV file in either supported layout.
pub struct Replay {
    lines: std::io::Lines<BufReader<File>>,
    layout: Layout,
    speed: ReplaySpeed,
    pending: std::collections::VecDeque<SensorReading>,
    row: usize,
    last_ts: Option<i64>,
    report: ReplayReport,
}

impl Replay {
    pub fn report(&self) -> &ReplayReport {
        &self.report
    }

    fn pace(&mut self, ts: i64) {
        if let (ReplaySpeed::Multiplier(m), Some(prev)) = (self.speed, self.last_ts) {
            let dt = (ts - prev) as f64 / m;
            if dt > 0.0 {
                std::thread::sleep(Duration::from_secs_f64(dt));
            }
        }
        self.last_ts = Some(ts);
    }

    fn next_row(&mut self) -> Option<Vec<SensorReading>> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => {
                    self.row += 1;
                    self.report.skipped.push(SkippedRow {
                        row: self.row,
                        reason: e.to_string(),
                    });
                    continue;
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            self.row += 1;
            self.report.rows_read += 1;
            let parsed = match &self.layout {
                Layout::Cs1(header) => parse_cs1_row(&line, header).map(|r| r.readings()),
                Layout::Cs2(layout) => {
                    parse_cs2_row(&line, layout, self.row as i64 - 1).map(|r| r.readings)
                }
            };
            match parsed {
                Ok(readings) => return Some(readings),
                Err(e) => {
                    tracing::warn!(row = self.row, error = %e, "skipping malformed row");
                    self.report.skipped.push(SkippedRow {
                        row: self.row,
                        reason: e.to_string(),
                    });
                }
            }
        }
    }
}

impl Iterator for Replay {
    type Item = SensorReading;

    fn next(&mut self) -> Option<SensorReading> {
        if self.pending.is_empty() {
            let readings = self.next_row()?;
            if let Some(first) = readings.first() {
                self.pace(first.timestamp);
            }
            self.pending.extend(readings);
        }
        let r = self.pending.pop_front()?;
        self.report.readings_emitted += 1;
        Some(r)
    }
}

/// Opens `path` for replay. Failure-record files are detected by header;
/// anything else is treated as a sensor matrix resolved through `map`.
pub fn replay(path: &Path, speed: ReplaySpeed, map: &SensorMap) -> Result<Replay, IngestError> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => IngestError::FileNotFound(path.to_path_buf()),
        _ => IngestError::Io(e.to_string()),
    })?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(line) => parse_header(&line.map_err(|e| IngestError::Io(e.to_string()))?)?,
        None => Vec::new(),
    };
    let layout = if is_cs1_header(&header) {
        Layout::Cs1(header)
    } else {
        Layout::Cs2(Cs2Layout::from_header(&header, map)?)
    };
    Ok(Replay {
        lines,
        layout,
        speed,
        pending: Default::default(),
        row: 0,
        last_ts: None,
        report: ReplayReport::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cs1_header() -> Vec<String> {
        CS1_COLUMNS.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parses_first_failure_row() {
        let r = parse_cs1_row("81,7,1583193600,0.363742,0.522,0.499,61,97,0", &cs1_header()).unwrap();
        assert_eq!(r.machine_id, 81);
        assert_eq!(r.type_of_failure, 7);
        assert_eq!(r.timestamp, 1583193600);
        assert_eq!(r.label, 0);
        assert_eq!(r.humid, 61);
        assert_eq!(r.temp, 97);
        assert!((r.time_repair - 0.363742).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_binary_label() {
        let err = parse_cs1_row("81,7,1583193600,0.363742,0.522,0.499,61,97,2", &cs1_header()).unwrap_err();
        assert!(matches!(err, IngestError::TypeError { ref column, .. } if column == "label"));
    }

    #[test]
    fn cs1_wrong_arity_and_bad_number() {
        let h = cs1_header();
        assert!(matches!(
            parse_cs1_row("81,7,1583193600", &h),
            Err(IngestError::MalformedRow { expected: 9, found: 3 })
        ));
        assert!(matches!(
            parse_cs1_row("81,7,1583193600,abc,0.522,0.499,61,97,0", &h),
            Err(IngestError::TypeError { .. })
        ));
        assert!(matches!(
            parse_cs1_row("81,7,1583193600,0.3,0.522,0.499,161,97,0", &h),
            Err(IngestError::TypeError { .. })
        ));
    }

    #[test]
    fn cs1_extras_preserved() {
        let mut h = cs1_header();
        h.push("shift".into());
        let line = "81,7,1583193600,0.363742,0.522,0.499,61,97,0,night";
        let r = parse_cs1_row(line, &h).unwrap();
        assert_eq!(r.extras.get("shift").map(String::as_str), Some("night"));
        assert_eq!(r.to_csv_row(&h), line);
    }

    #[test]
    fn cs1_missing_column() {
        let h: Vec<String> = CS1_COLUMNS[..8].iter().map(|s| s.to_string()).collect();
        assert!(matches!(
            parse_cs1_row("1,2,3,4,5,6,7,8", &h),
            Err(IngestError::MissingColumn(c)) if c == "label"
        ));
    }

    fn figure_header() -> Vec<String> {
        parse_header(",2F03_COLISÃO_S3,2F03_VIBRAÇÃO_GLOBAL_S3,2F03_DESBALANCEAMENTO_S3,label").unwrap()
    }

    #[test]
    fn parses_sensor_matrix_row() {
        let layout = Cs2Layout::from_header(&figure_header(), &SensorMap::furnace_defaults()).unwrap();
        let row = parse_cs2_row("63023,15.892150,0.245994,0.065820,1", &layout, 0).unwrap();
        assert_eq!(row.label, Some(1));
        assert_eq!(row.readings.len(), 3);
        let ids: Vec<_> = row.readings.iter().map(|r| r.sensor_id.as_str()).collect();
        assert_eq!(ids, ["S2", "S1", "S3"]);
        assert!(row.readings.iter().all(|r| r.machine_id == "2F03" && r.timestamp == 63023));
        assert!((row.readings[0].value - 15.892150).abs() < 1e-12);
    }

    #[test]
    fn sensor_suffix_and_unknown_columns() {
        let map = SensorMap::default();
        assert_eq!(map.resolve("F01_S5").unwrap(), ("F01".into(), "S5".into()));
        assert_eq!(map.resolve("F01_bearing_S6").unwrap(), ("F01".into(), "S6".into()));
        assert!(matches!(map.resolve("F01_bearing"), Err(IngestError::UnknownSensor(_))));
        let restricted = SensorMap::default().with_known_sensors(["S1".to_string()]);
        assert!(matches!(restricted.resolve("F01_S5"), Err(IngestError::UnknownSensor(_))));
    }

    #[test]
    fn row_index_is_synthetic_timestamp() {
        let header = parse_header("F01_S1,F01_S2").unwrap();
        let layout = Cs2Layout::from_header(&header, &SensorMap::default()).unwrap();
        let row = parse_cs2_row("0.1,0.2", &layout, 41).unwrap();
        assert!(row.readings.iter().all(|r| r.timestamp == 41));
        assert_eq!(row.label, None);
        assert!(matches!(
            parse_cs2_row("0.1", &layout, 0),
            Err(IngestError::MalformedRow { .. })
        ));
    }

    #[test]
    fn route_decodes_json_and_csv() {
        let route = TopicRoute::default();
        let r = route.decode("plant/m1/S1", br#"{"ts":10,"value":2.4}"#).unwrap();
        assert_eq!(r, SensorReading::new("m1", "S1", 10, 2.4).unwrap());
        let csv_route = TopicRoute::new("site/{machine}/{sensor}/raw", PayloadFormat::CsvLine).unwrap();
        let r = csv_route.decode("site/m2/S5/raw", b"11, 3.5").unwrap();
        assert_eq!((r.machine_id.as_str(), r.timestamp, r.value), ("m2", 11, 3.5));
        assert!(route.decode("plant/m1", b"{}").is_err());
        assert!(TopicRoute::new("plant/{machine}", PayloadFormat::Json).is_err());
        assert_eq!(route.wildcard_filter(), "plant/+/+");
    }

    #[test]
    fn wildcard_matching() {
        assert!(topic_matches("plant/+/+", "plant/m1/S1"));
        assert!(topic_matches("plant/#", "plant/m1/S1"));
        assert!(!topic_matches("plant/+", "plant/m1/S1"));
        assert!(!topic_matches("plant/m2/+", "plant/m1/S1"));
    }

    #[test]
    fn subscription_counts_bad_payloads_and_reports_disconnect() {
        let bus = InProcBus::new();
        let route = TopicRoute::default();
        let mut sub = subscribe(&bus, &route, "plant/#");
        bus.publish("plant/m1/S1", br#"{"ts":1,"value":1.0}"#);
        bus.publish("plant/m1/S1", b"garbage");
        bus.publish("plant/m1/cmd", br#"{"cmd":"stop"}"#);
        bus.publish("plant/m1/S1", br#"{"ts":2,"value":2.0}"#);
        bus.close();
        assert_eq!(sub.next().unwrap().unwrap().timestamp, 1);
        assert_eq!(sub.next().unwrap().unwrap().timestamp, 2);
        assert_eq!(sub.next(), Some(Err(IngestError::ConnectionLost)));
        assert_eq!(sub.next(), None);
        assert_eq!(sub.dropped(), 1);
    }

    #[test]
    fn speed_parsing() {
        assert_eq!("max".parse::<ReplaySpeed>().unwrap(), ReplaySpeed::Max);
        assert_eq!("2".parse::<ReplaySpeed>().unwrap(), ReplaySpeed::Multiplier(2.0));
        assert!("0".parse::<ReplaySpeed>().is_err());
        assert!("fast".parse::<ReplaySpeed>().is_err());
    }
}
