//! HTTP routes. Reads are projections of the log; writes append commands.

use std::collections::{BTreeMap, VecDeque};
use std::convert::Infallible;
use std::time::Duration;

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::mpsc;

use dtf_core::ingest::SensorReading;
use dtf_core::labeler::{ManagementPolicy, PolicyStyle};
use dtf_core::store::{EventKind, EventRecord, ModelRegistry, SeqRange};

use crate::projection::{downsample_max_e, MachineState, MAX_SERIES_POINTS};
use crate::runtime::{Runtime, RuntimeError};

#[derive(Clone)]
pub struct AppState {
    pub runtime: Runtime,
    pub ingest: mpsc::Sender<SensorReading>,
    pub registry: ModelRegistry,
    pub token: Option<String>,
    /// Flips to true on shutdown so open streams end.
    pub closing: tokio::sync::watch::Receiver<bool>,
}

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({"error": self.1}))).into_response()
    }
}

impl From<RuntimeError> for ApiError {
    fn from(e: RuntimeError) -> Self {
        let code = match e {
            RuntimeError::UnknownMachine(_) => StatusCode::NOT_FOUND,
            RuntimeError::StopPending(_) => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(code, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/machines", get(machines))
        .route("/machines/:id/condition", get(condition))
        .route("/machines/:id/stop", post(stop))
        .route("/policy", post(policy))
        .route("/alerts", get(alerts))
        .route("/models", get(models))
        .route("/stream", get(stream))
        .route("/ingest", post(ingest))
        .layer(middleware::from_fn_with_state(state.clone(), auth))
        .route("/health", get(|| async { Json(json!({"status": "ok"})) }))
        .with_state(state)
}

async fn auth(State(s): State<AppState>, req: Request, next: Next) -> Response {
    let Some(token) = s.token.as_deref() else {
        return next.run(req).await;
    };
    let header_ok = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        == Some(token);
    // Browsers' EventSource cannot set headers, so `?token=` is accepted too.
    let query_ok = req
        .uri()
        .query()
        .is_some_and(|q| q.split('&').any(|kv| kv.strip_prefix("token=") == Some(token)));
    if header_ok || query_ok {
        next.run(req).await
    } else {
        ApiError(StatusCode::UNAUTHORIZED, "missing or invalid bearer token".into()).into_response()
    }
}

#[derive(Serialize)]
struct MachineSummary {
    machine_id: String,
    timestamp: Option<i64>,
    expected_value: Option<f64>,
    intervene: Option<u8>,
    sensor_labels: BTreeMap<String, u8>,
    active_alerts: usize,
    policy: ManagementPolicy,
    stop_pending: bool,
    latest_seq: Option<u64>,
}

impl From<&MachineState> for MachineSummary {
    fn from(m: &MachineState) -> Self {
        Self {
            machine_id: m.machine_id.clone(),
            timestamp: m.latest.as_ref().map(|e| e.timestamp),
            expected_value: m.latest.as_ref().map(|e| e.expected_value),
            intervene: m.latest.as_ref().map(|e| e.intervene),
            sensor_labels: m.sensor_labels.clone(),
            active_alerts: m.active_alerts.len(),
            policy: m.policy,
            stop_pending: m.stop_pending,
            latest_seq: m.latest_seq,
        }
    }
}

async fn machines(State(s): State<AppState>) -> Json<Value> {
    let p = s.runtime.lock();
    let snap = p.snapshot();
    let list: Vec<MachineSummary> = snap.machines.values().map(MachineSummary::from).collect();
    Json(json!({"seq": snap.seq, "machines": list}))
}

#[derive(Deserialize)]
struct ConditionQuery {
    from: Option<i64>,
    to: Option<i64>,
    /// Seconds back from the latest estimate.
    window: Option<i64>,
}

async fn condition(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ConditionQuery>,
) -> ApiResult<Json<Value>> {
    let p = s.runtime.lock();
    let snap = p.snapshot();
    if !snap.machines.contains_key(&id) {
        return Err(RuntimeError::UnknownMachine(id).into());
    }
    let empty = Vec::new();
    let series = snap.series.get(&id).unwrap_or(&empty);
    let latest = series.last().map(|pt| pt.timestamp).unwrap_or_default();
    let from = q.from.or(q.window.map(|w| latest - w)).unwrap_or(i64::MIN);
    let to = q.to.unwrap_or(i64::MAX);
    let selected: Vec<_> = series
        .iter()
        .filter(|pt| pt.timestamp >= from && pt.timestamp <= to)
        .cloned()
        .collect();
    let keep = downsample_max_e(&selected, MAX_SERIES_POINTS);
    let points: Vec<Value> = keep
        .iter()
        .map(|&i| {
            let pt = &selected[i];
            json!({"timestamp": pt.timestamp, "expected_value": pt.expected_value, "intervene": pt.intervene})
        })
        .collect();
    let mut sensors: BTreeMap<String, Vec<Value>> = BTreeMap::new();
    for &i in &keep {
        let pt = &selected[i];
        for (sensor, label) in &pt.labels {
            sensors
                .entry(sensor.clone())
                .or_default()
                .push(json!({"timestamp": pt.timestamp, "label": label}));
        }
    }
    Ok(Json(json!({
        "machine_id": id,
        "total_points": selected.len(),
        "points": points,
        "sensors": sensors,
    })))
}

#[derive(Deserialize)]
struct PolicyBody {
    machine_id: Option<String>,
    style: Option<String>,
    threshold: Option<f64>,
}

async fn policy(State(s): State<AppState>, body: Option<Json<PolicyBody>>) -> ApiResult<Json<Value>> {
    let unprocessable = |m: String| ApiError(StatusCode::UNPROCESSABLE_ENTITY, m);
    let Some(Json(b)) = body else {
        return Err(unprocessable("expected a JSON body".into()));
    };
    let mut p = s.runtime.lock();
    let current = match &b.machine_id {
        Some(m) => p.snapshot().policy_for(m),
        None => p.snapshot().default_policy,
    };
    let style = match &b.style {
        Some(st) => st.parse::<PolicyStyle>().map_err(|e| unprocessable(e.to_string()))?,
        None => current.style,
    };
    let threshold = b.threshold.unwrap_or(style.default_threshold());
    let effective = ManagementPolicy::with_threshold(style, threshold).map_err(|e| unprocessable(e.to_string()))?;
    let seq = p.set_policy(b.machine_id.as_deref(), effective)?;
    Ok(Json(json!({
        "seq": seq,
        "machine_id": b.machine_id,
        "style": effective.style,
        "threshold": effective.threshold,
    })))
}

#[derive(Deserialize, Default)]
struct StopBody {
    reason: Option<String>,
}

async fn stop(
    State(s): State<AppState>,
    Path(id): Path<String>,
    body: Option<Json<StopBody>>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let note = body.and_then(|Json(b)| b.reason);
    let (seq, cmd, jobs) = s.runtime.lock().manual_stop(&id, note)?;
    s.runtime.submit(jobs);
    Ok((StatusCode::ACCEPTED, Json(json!({"command_id": seq, "command": cmd}))))
}

#[derive(Deserialize)]
struct SinceQuery {
    since_seq: Option<u64>,
}

fn flatten(rec: &EventRecord) -> Value {
    json!({"seq": rec.seq, "kind": rec.kind, "wall_time": rec.wall_time, "payload": rec.payload})
}

async fn alerts(State(s): State<AppState>, Query(q): Query<SinceQuery>) -> Json<Value> {
    let since = q.since_seq.unwrap_or(0);
    let recs = s.runtime.lock().scan(Some(&[EventKind::Alert]), SeqRange::from(since + 1));
    Json(Value::Array(recs.iter().map(flatten).collect()))
}

async fn models(State(s): State<AppState>) -> ApiResult<Json<Value>> {
    let entries = s
        .registry
        .list()
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let out: Vec<Value> = entries
        .into_iter()
        .map(|e| {
            json!({
                "name": e.name,
                "kind": e.kind,
                "fingerprint": e.fingerprint,
                "metrics": e.report,
                "header": dtf_core::automl::ModelReport::CSV_HEADER,
                "row": e.report.as_ref().map(|r| r.csv_row()),
            })
        })
        .collect();
    Ok(Json(Value::Array(out)))
}

const STREAM_BATCH: usize = 256;

async fn stream(
    State(s): State<AppState>,
    Query(q): Query<SinceQuery>,
) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let cursor = q.since_seq.unwrap_or(0);
    let rx = s.runtime.lock().subscribe();
    let rt = s.runtime.clone();
    let closing = s.closing.clone();
    let events = futures::stream::unfold(
        (cursor, rx, VecDeque::<EventRecord>::new()),
        move |(mut cursor, mut rx, mut buf)| {
            let rt = rt.clone();
            let mut closing = closing.clone();
            async move {
                loop {
                    if let Some(rec) = buf.pop_front() {
                        let ev = Event::default()
                            .id(rec.seq.to_string())
                            .event(rec.kind.as_str())
                            .data(serde_json::to_string(&rec).expect("record serializes"));
                        return Some((Ok(ev), (cursor, rx, buf)));
                    }
                    rx.borrow_and_update();
                    let batch = rt.lock().records_after(cursor, STREAM_BATCH);
                    if let Some(last) = batch.last() {
                        cursor = last.seq;
                        buf.extend(batch);
                        continue;
                    }
                    if *closing.borrow() {
                        return None;
                    }
                    tokio::select! {
                        changed = rx.changed() => if changed.is_err() { return None },
                        _ = closing.changed() => return None,
                    }
                }
            }
        },
    );
    Sse::new(events).keep_alive(KeepAlive::new().interval(Duration::from_secs(15)))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum IngestBody {
    One(SensorReading),
    Many(Vec<SensorReading>),
}

async fn ingest(State(s): State<AppState>, body: Option<Json<IngestBody>>) -> ApiResult<(StatusCode, Json<Value>)> {
    let Some(Json(body)) = body else {
        return Err(ApiError(StatusCode::UNPROCESSABLE_ENTITY, "expected a reading or an array of readings".into()));
    };
    let readings = match body {
        IngestBody::One(r) => vec![r],
        IngestBody::Many(rs) => rs,
    };
    for r in &readings {
        r.validate()
            .map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    }
    let n = readings.len();
    for r in readings {
        s.ingest
            .send(r)
            .await
            .map_err(|_| ApiError(StatusCode::SERVICE_UNAVAILABLE, "pipeline stopped".into()))?;
    }
    Ok((StatusCode::ACCEPTED, Json(json!({"accepted": n}))))
}
