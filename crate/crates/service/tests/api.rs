use std::net::SocketAddr;
use std::time::{Duration, Instant};

use dtf_core::agent::RetryPolicy;
use dtf_core::ingest::InProcBus;
use dtf_service::{serve, PipelineConfig, ServeOptions};
use reqwest::StatusCode;
use serde_json::{json, Value};
use tokio::sync::oneshot;

const TOKEN: &str = "s3cret";

struct Server {
    base: String,
    client: reqwest::Client,
    stop: Option<oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<anyhow::Result<()>>,
    _dir: tempfile::TempDir,
}

impl Server {
    async fn start() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = PipelineConfig {
            log_dir: dir.path().join("events"),
            models_dir: dir.path().join("models"),
            bind: "127.0.0.1:0".into(),
            window_size: 5,
            ..PipelineConfig::default()
        };
        let resolved = config.resolve().unwrap();
        let opts = ServeOptions {
            config,
            resolved,
            token: Some(TOKEN.into()),
            retry: RetryPolicy::default(),
            bus: InProcBus::new(),
        };
        let (stop_tx, stop_rx) = oneshot::channel::<()>();
        let (addr_tx, addr_rx) = oneshot::channel::<SocketAddr>();
        let task = tokio::spawn(serve(
            opts,
            async {
                let _ = stop_rx.await;
            },
            move |addr| {
                let _ = addr_tx.send(addr);
            },
        ));
        let addr = addr_rx.await.unwrap();
        Self {
            base: format!("http://{addr}"),
            client: reqwest::Client::new(),
            stop: Some(stop_tx),
            task,
            _dir: dir,
        }
    }

    fn get(&self, path: &str) -> reqwest::RequestBuilder {
        self.client.get(format!("{}{path}", self.base)).bearer_auth(TOKEN)
    }

    fn post(&self, path: &str) -> reqwest::RequestBuilder {
        self.client.post(format!("{}{path}", self.base)).bearer_auth(TOKEN)
    }

    async fn json(&self, path: &str) -> Value {
        self.get(path).send().await.unwrap().json().await.unwrap()
    }

    /// Posts normal furnace rows `from..to` and waits until the last one has
    /// produced an estimate.
    async fn feed(&self, machine: &str, from: i64, to: i64) {
        let normal = [1.2, 2400.0, 1.1, 2.5, 25.0, 30.0, 180.0];
        for i in from..to {
            let batch: Vec<Value> = normal
                .iter()
                .enumerate()
                .map(|(k, v)| {
                    json!({"machine_id": machine, "sensor_id": format!("S{}", k + 1), "timestamp": 1000 + i, "value": v * (1.0 + 0.01 * (i % 3) as f64)})
                })
                .collect();
            let resp = self.post("/ingest").json(&batch).send().await.unwrap();
            assert_eq!(resp.status(), StatusCode::ACCEPTED);
        }
        let deadline = Instant::now() + Duration::from_secs(10);
        loop {
            let m = self.json("/machines").await;
            let ts = m["machines"]
                .as_array()
                .unwrap()
                .iter()
                .find(|x| x["machine_id"] == machine)
                .and_then(|x| x["timestamp"].as_i64());
            if ts == Some(1000 + to - 1) {
                return;
            }
            assert!(Instant::now() < deadline, "pipeline did not catch up: {m}");
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
    }

    async fn shutdown(mut self) {
        self.stop.take().unwrap().send(()).unwrap();
        self.task.await.unwrap().unwrap();
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn status_codes() {
    let s = Server::start().await;
    let anon = |p: &str| s.client.get(format!("{}{p}", s.base));
    assert_eq!(anon("/health").send().await.unwrap().status(), StatusCode::OK);
    assert_eq!(anon("/machines").send().await.unwrap().status(), StatusCode::UNAUTHORIZED);
    let wrong = anon("/machines").bearer_auth("nope").send().await.unwrap();
    assert_eq!(wrong.status(), StatusCode::UNAUTHORIZED);
    let by_query = anon(&format!("/machines?token={TOKEN}")).send().await.unwrap();
    assert_eq!(by_query.status(), StatusCode::OK);

    let st = |r: reqwest::Response| r.status();
    assert_eq!(st(s.get("/machines").send().await.unwrap()), StatusCode::OK);
    assert_eq!(st(s.get("/machines/ghost/condition").send().await.unwrap()), StatusCode::NOT_FOUND);
    assert_eq!(st(s.post("/machines/ghost/stop").send().await.unwrap()), StatusCode::NOT_FOUND);

    let bad = [
        json!({"style": "reckless"}),
        json!({"style": "moderate", "threshold": 2.0}),
        json!({"threshold": -0.1}),
    ];
    for body in &bad {
        let r = s.post("/policy").json(body).send().await.unwrap();
        assert_eq!(r.status(), StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    }
    assert_eq!(st(s.post("/policy").send().await.unwrap()), StatusCode::UNPROCESSABLE_ENTITY);
    let nan = json!({"machine_id": "F1", "sensor_id": "S1", "timestamp": 1, "value": "hot"});
    assert_eq!(st(s.post("/ingest").json(&nan).send().await.unwrap()), StatusCode::UNPROCESSABLE_ENTITY);
    let empty_id = json!({"machine_id": "F1", "sensor_id": "", "timestamp": 1, "value": 1.0});
    assert_eq!(st(s.post("/ingest").json(&empty_id).send().await.unwrap()), StatusCode::UNPROCESSABLE_ENTITY);

    s.feed("F1", 0, 8).await;
    let cond = s.json("/machines/F1/condition").await;
    assert_eq!(cond["total_points"], 4);
    assert!(cond["points"].as_array().unwrap().iter().all(|p| p["intervene"] == 0));

    let ok = s.post("/policy").json(&json!({"machine_id": "F1", "style": "aggressive"})).send().await.unwrap();
    assert_eq!(ok.status(), StatusCode::OK);
    let ok: Value = ok.json().await.unwrap();
    assert_eq!(ok["threshold"], 0.8);

    let first = s.post("/machines/F1/stop").json(&json!({"reason": "inspection"})).send().await.unwrap();
    assert_eq!(first.status(), StatusCode::ACCEPTED);
    let second = s.post("/machines/F1/stop").send().await.unwrap();
    assert_eq!(second.status(), StatusCode::CONFLICT);

    let m = s.json("/machines").await;
    let f1 = &m["machines"][0];
    assert_eq!(f1["machine_id"], "F1");
    assert_eq!(f1["stop_pending"], true);
    assert_eq!(f1["policy"]["style"], "aggressive");
    assert_eq!(s.json("/models").await, json!([]));
    s.shutdown().await;
}

/// Reads `id:` fields off an SSE response until `last` is seen.
async fn sse_ids(mut resp: reqwest::Response, last: u64) -> Vec<u64> {
    let mut ids = Vec::new();
    let mut buf = String::new();
    while ids.last() != Some(&last) {
        let chunk = tokio::time::timeout(Duration::from_secs(10), resp.chunk())
            .await
            .expect("stream stalled")
            .unwrap()
            .expect("stream ended early");
        buf.push_str(std::str::from_utf8(&chunk).unwrap());
        while let Some(end) = buf.find("\n\n") {
            let event: String = buf.drain(..end + 2).collect();
            for line in event.lines() {
                if let Some(id) = line.strip_prefix("id:") {
                    ids.push(id.trim().parse().unwrap());
                }
            }
        }
    }
    ids
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn two_stream_clients_see_the_same_ordered_events() {
    let s = Server::start().await;
    s.feed("F1", 0, 6).await;
    let a = s.get("/stream").send().await.unwrap();
    let b = s.get("/stream?since_seq=0").send().await.unwrap();
    assert_eq!(a.status(), StatusCode::OK);
    assert!(a.headers()["content-type"].to_str().unwrap().starts_with("text/event-stream"));
    s.feed("F1", 6, 15).await;
    let last = s.json("/machines").await["seq"].as_u64().unwrap();
    let (ia, ib) = tokio::join!(sse_ids(a, last), sse_ids(b, last));
    assert_eq!(ia, (1..=last).collect::<Vec<_>>());
    assert_eq!(ia, ib);

    let tail = s.get(&format!("/stream?since_seq={}", last - 2)).send().await.unwrap();
    assert_eq!(sse_ids(tail, last).await, vec![last - 1, last]);
    s.shutdown().await;
}
