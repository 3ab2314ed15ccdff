use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use fs2::FileExt;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{io_error, StoreError};

pub const LOCK_FILE: &str = "events.lock";
const SEGMENT_PREFIX: &str = "events-";
const SEGMENT_SUFFIX: &str = ".log";
const HEADER_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Reading,
    Estimate,
    Alert,
    Action,
    Stop,
    Policy,
}

impl EventKind {
    pub const ALL: [EventKind; 6] = [
        EventKind::Reading,
        EventKind::Estimate,
        EventKind::Alert,
        EventKind::Action,
        EventKind::Stop,
        EventKind::Policy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Reading => "reading",
            EventKind::Estimate => "estimate",
            EventKind::Alert => "alert",
            EventKind::Action => "action",
            EventKind::Stop => "stop",
            EventKind::Policy => "policy",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EventKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown event kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub kind: EventKind,
    /// RFC 3339, UTC, millisecond precision.
    pub wall_time: String,
    pub payload: Value,
}

impl EventRecord {
    fn day(&self) -> &str {
        self.wall_time.get(..10).unwrap_or("unknown")
    }
}

/// Inclusive sequence range; `end: None` means open-ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqRange {
    pub start: u64,
    pub end: Option<u64>,
}

impl SeqRange {
    pub fn all() -> Self {
        Self { start: 1, end: None }
    }

    pub fn from(start: u64) -> Self {
        Self { start, end: None }
    }

    pub fn new(start: u64, end: u64) -> Self {
        Self { start, end: Some(end) }
    }

    pub fn contains(&self, seq: u64) -> bool {
        seq >= self.start && self.end.map_or(true, |e| seq <= e)
    }
}

impl Default for SeqRange {
    fn default() -> Self {
        Self::all()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Durability {
    /// Flush and fsync each record before `append` returns.
    Sync,
    /// Flush to the OS only.
    Flush,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RecoveryReport {
    pub segments: usize,
    pub records: usize,
    /// Incomplete or checksum-failing frames dropped from the tail (0 or 1).
    pub truncated_records: usize,
    pub truncated_bytes: u64,
}

pub fn encode_frame(json: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + 1);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(json).to_le_bytes());
    out.extend_from_slice(json);
    out.push(b'\n');
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameScan {
    pub records: Vec<EventRecord>,
    /// Length of the prefix made of whole, valid frames.
    pub valid_len: usize,
}

/// Decodes frames until the first incomplete or invalid one.
pub fn decode_frames(bytes: &[u8]) -> FrameScan {
    let mut records = Vec::new();
    let mut pos = 0;
    while bytes.len() - pos >= HEADER_LEN {
        let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        let crc = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap());
        let body_start = pos + HEADER_LEN;
        let Some(end) = body_start.checked_add(len).filter(|e| *e < bytes.len()) else { break };
        let body = &bytes[body_start..end];
        if bytes[end] != b'\n' || crc32fast::hash(body) != crc {
            break;
        }
        let Ok(rec) = serde_json::from_slice::<EventRecord>(body) else { break };
        records.push(rec);
        pos = end + 1;
    }
    FrameScan { records, valid_len: pos }
}

fn req<'a>(kind: EventKind, p: &'a Value, key: &str) -> Result<&'a Value, StoreError> {
    p.get(key).filter(|v| !v.is_null()).ok_or_else(|| StoreError::SchemaViolation {
        kind: kind.to_string(),
        reason: format!("missing field `{key}`"),
    })
}

fn typed(kind: EventKind, p: &Value, key: &str, check: fn(&Value) -> bool, what: &str) -> Result<(), StoreError> {
    if check(req(kind, p, key)?) {
        Ok(())
    } else {
        Err(StoreError::SchemaViolation {
            kind: kind.to_string(),
            reason: format!("field `{key}` must be {what}"),
        })
    }
}

/// Checks the fields each event kind must carry.
pub fn validate_payload(kind: EventKind, p: &Value) -> Result<(), StoreError> {
    let s = |key| typed(kind, p, key, Value::is_string, "a string");
    let n = |key| typed(kind, p, key, Value::is_number, "a number");
    let i = |key| typed(kind, p, key, |v| v.is_i64() || v.is_u64(), "an integer");
    if !p.is_object() {
        return Err(StoreError::SchemaViolation {
            kind: kind.to_string(),
            reason: "payload must be an object".into(),
        });
    }
    match kind {
        EventKind::Reading => {
            s("machine_id")?;
            s("sensor_id")?;
            i("timestamp")?;
            n("value")
        }
        EventKind::Estimate => {
            s("machine_id")?;
            i("timestamp")?;
            n("expected_value")?;
            i("intervene")?;
            typed(kind, p, "labels", Value::is_array, "an array")
        }
        EventKind::Alert => {
            typed(kind, p, "code", |v| v.as_i64().is_some_and(|c| c > 0), "a positive integer")?;
            s("subject")?;
            s("fired_by")
        }
        EventKind::Action => {
            s("phase")?;
            if p["phase"] == "planned" {
                s("action")?;
                s("target")?;
                s("route")
            } else {
                i("ref_seq")
            }
        }
        EventKind::Stop => {
            s("machine_id")?;
            s("reason")?;
            req(kind, p, "evidence")?;
            i("issued_at")
        }
        EventKind::Policy => {
            s("style")?;
            typed(
                kind,
                p,
                "threshold",
                |v| v.as_f64().is_some_and(|t| (0.0..=1.0).contains(&t)),
                "a number in [0, 1]",
            )
        }
    }
}

fn segment_name(day: &str) -> String {
    format!("{SEGMENT_PREFIX}{day}{SEGMENT_SUFFIX}")
}

fn segments(dir: &Path) -> Result<Vec<PathBuf>, StoreError> {
    let mut out = Vec::new();
    if !dir.exists() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with(SEGMENT_PREFIX) && name.ends_with(SEGMENT_SUFFIX) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Reads every segment. When `repair` is set a torn tail on the last segment
/// is cut off on disk.
fn load(dir: &Path, repair: bool) -> Result<(Vec<EventRecord>, RecoveryReport), StoreError> {
    let files = segments(dir)?;
    let mut report = RecoveryReport {
        segments: files.len(),
        ..RecoveryReport::default()
    };
    let mut records: Vec<EventRecord> = Vec::new();
    for (idx, path) in files.iter().enumerate() {
        let bytes = fs::read(path)?;
        let scan = decode_frames(&bytes);
        let corrupt = || StoreError::CorruptLog {
            file: path.display().to_string(),
            offset: scan.valid_len as u64,
        };
        if scan.valid_len < bytes.len() {
            if idx + 1 != files.len() {
                return Err(corrupt());
            }
            report.truncated_records = 1;
            report.truncated_bytes = (bytes.len() - scan.valid_len) as u64;
            if repair {
                let f = OpenOptions::new().write(true).open(path)?;
                f.set_len(scan.valid_len as u64)?;
                f.sync_all()?;
            }
        }
        for r in &scan.records {
            if records.last().is_some_and(|last| r.seq <= last.seq) {
                return Err(corrupt());
            }
        }
        records.extend(scan.records);
    }
    report.records = records.len();
    Ok((records, report))
}

/// Single-writer append-only log. Committed records are also kept in memory
/// for scans.
#[derive(Debug)]
pub struct EventLog {
    dir: PathBuf,
    _lock: File,
    records: Vec<EventRecord>,
    segment: Option<(String, File)>,
    durability: Durability,
}

impl EventLog {
    pub fn open(dir: impl AsRef<Path>) -> Result<(Self, RecoveryReport), StoreError> {
        Self::open_with(dir, Durability::Sync)
    }

    pub fn open_with(dir: impl AsRef<Path>, durability: Durability) -> Result<(Self, RecoveryReport), StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(dir.join(LOCK_FILE))?;
        lock.try_lock_exclusive()
            .map_err(|_| StoreError::Locked(dir.display().to_string()))?;
        let (records, report) = load(&dir, true)?;
        Ok((
            Self {
                dir,
                _lock: lock,
                records,
                segment: None,
                durability,
            },
            report,
        ))
    }

    /// Reads a log without taking the writer lock or repairing it.
    pub fn read(dir: impl AsRef<Path>) -> Result<(Vec<EventRecord>, RecoveryReport), StoreError> {
        load(dir.as_ref(), false)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn last_seq(&self) -> u64 {
        self.records.last().map_or(0, |r| r.seq)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn get(&self, seq: u64) -> Option<&EventRecord> {
        self.records
            .binary_search_by_key(&seq, |r| r.seq)
            .ok()
            .map(|i| &self.records[i])
    }

    pub fn append(&mut self, kind: EventKind, payload: Value) -> Result<u64, StoreError> {
        self.append_at(kind, payload, Utc::now())
    }

    pub fn append_at(&mut self, kind: EventKind, payload: Value, at: DateTime<Utc>) -> Result<u64, StoreError> {
        validate_payload(kind, &payload)?;
        let rec = EventRecord {
            seq: self.last_seq() + 1,
            kind,
            wall_time: at.to_rfc3339_opts(SecondsFormat::Millis, true),
            payload,
        };
        let json = serde_json::to_vec(&rec).expect("record serializes");
        let frame = encode_frame(&json);
        let day = rec.day().to_string();
        let durability = self.durability;
        let file = self.segment_for(&day)?;
        let before = file.metadata()?.len();
        let written = file.write_all(&frame).and_then(|_| file.flush());
        let synced = written.and_then(|_| match durability {
            Durability::Sync => file.sync_data(),
            Durability::Flush => Ok(()),
        });
        if let Err(e) = synced {
            let _ = file.set_len(before);
            return Err(io_error(e, &segment_name(&day)));
        }
        self.records.push(rec);
        Ok(self.last_seq())
    }

    fn segment_for(&mut self, day: &str) -> Result<&mut File, StoreError> {
        if self.segment.as_ref().map(|(d, _)| d.as_str()) != Some(day) {
            let f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(self.dir.join(segment_name(day)))?;
            self.segment = Some((day.to_string(), f));
        }
        Ok(&mut self.segment.as_mut().unwrap().1)
    }

    /// Records in seq order within `range`, optionally restricted to `kinds`.
    pub fn scan(&self, kinds: Option<&[EventKind]>, range: SeqRange) -> Vec<EventRecord> {
        let start = self.records.partition_point(|r| r.seq < range.start);
        self.records[start..]
            .iter()
            .take_while(|r| range.end.map_or(true, |e| r.seq <= e))
            .filter(|r| kinds.map_or(true, |ks| ks.contains(&r.kind)))
            .cloned()
            .collect()
    }
}
