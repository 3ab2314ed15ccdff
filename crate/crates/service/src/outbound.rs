//! Delivery of actions and device commands off the pipeline thread.

use std::sync::mpsc::{self, Receiver, SyncSender, TrySendError};
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::{json, Value};

use dtf_core::agent::{deliver_with_retry, DeliveryOutcome, RetryPolicy};
use dtf_core::ingest::InProcBus;

pub const QUEUE_CAPACITY: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub enum Job {
    /// HTTP POST of a JSON body.
    Webhook { ref_seq: u64, url: String, body: Value },
    /// Publish to a bus or broker topic.
    Publish { ref_seq: u64, topic: String, payload: Value },
}

impl Job {
    pub fn ref_seq(&self) -> u64 {
        match self {
            Job::Webhook { ref_seq, .. } | Job::Publish { ref_seq, .. } => *ref_seq,
        }
    }

    fn describe(&self) -> Value {
        match self {
            Job::Webhook { url, .. } => json!({"transport": "http", "target": url}),
            Job::Publish { topic, .. } => json!({"target": topic}),
        }
    }
}

/// Where `Publish` jobs go.
pub trait Publisher: Send {
    fn name(&self) -> &str;
    fn publish(&mut self, topic: &str, payload: &[u8]) -> Result<(), String>;
}

pub struct BusPublisher(pub InProcBus);

impl Publisher for BusPublisher {
    fn name(&self) -> &str {
        "inproc"
    }

    fn publish(&mut self, topic: &str, payload: &[u8]) -> Result<(), String> {
        self.0.publish(topic, payload);
        Ok(())
    }
}

/// Sends webhook POSTs.
pub trait Poster: Send {
    fn post(&mut self, url: &str, body: &Value) -> Result<(), String>;
}

pub struct HttpPoster {
    client: reqwest::blocking::Client,
}

impl HttpPoster {
    pub fn new() -> Result<Self, String> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(5))
            .build()
            .map_err(|e| e.to_string())?;
        Ok(Self { client })
    }
}

impl Poster for HttpPoster {
    fn post(&mut self, url: &str, body: &Value) -> Result<(), String> {
        let resp = self.client.post(url).json(body).send().map_err(|e| e.to_string())?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(format!("HTTP {}", resp.status()))
        }
    }
}

/// Outcome records are handed back through this callback as `action`
/// payloads (`phase` = `emitted` or `dead_letter`).
pub type Recorder = Box<dyn Fn(Value) + Send + Sync>;

/// Two worker threads, one per job kind, so a slow webhook never delays a
/// stop command.
pub struct Outbox {
    webhook_tx: Option<SyncSender<Job>>,
    publish_tx: Option<SyncSender<Job>>,
    workers: Vec<JoinHandle<()>>,
    record: std::sync::Arc<Recorder>,
}

fn outcome_record(job: &Job, outcome: &DeliveryOutcome, transport: &str) -> Value {
    let mut v = job.describe();
    let m = v.as_object_mut().unwrap();
    m.insert("ref_seq".into(), json!(job.ref_seq()));
    m.entry("transport").or_insert(json!(transport));
    match outcome {
        DeliveryOutcome::Delivered { attempts } => {
            m.insert("phase".into(), json!("emitted"));
            m.insert("attempts".into(), json!(attempts));
        }
        DeliveryOutcome::DeadLettered { attempts, last_error } => {
            m.insert("phase".into(), json!("dead_letter"));
            m.insert("attempts".into(), json!(attempts));
            m.insert("error".into(), json!(last_error));
        }
    }
    v
}

fn worker<F>(rx: Receiver<Job>, retry: RetryPolicy, record: std::sync::Arc<Recorder>, mut send: F, transport: String) -> impl FnOnce()
where
    F: FnMut(&Job) -> Result<(), String> + Send + 'static,
{
    move || {
        for job in rx {
            let outcome = deliver_with_retry(&retry, |_| send(&job), std::thread::sleep);
            if let DeliveryOutcome::DeadLettered { last_error, .. } = &outcome {
                tracing::warn!(ref_seq = job.ref_seq(), error = %last_error, "delivery dead-lettered");
            }
            record(outcome_record(&job, &outcome, &transport));
        }
    }
}

impl Outbox {
    pub fn start(
        mut poster: Box<dyn Poster>,
        mut publisher: Box<dyn Publisher>,
        retry: RetryPolicy,
        record: Recorder,
    ) -> Self {
        let record = std::sync::Arc::new(record);
        let (wtx, wrx) = mpsc::sync_channel::<Job>(QUEUE_CAPACITY);
        let (ptx, prx) = mpsc::sync_channel::<Job>(QUEUE_CAPACITY);
        let transport = publisher.name().to_string();
        let w = std::thread::Builder::new()
            .name("dtf-webhook".into())
            .spawn(worker(
                wrx,
                retry,
                record.clone(),
                move |job| match job {
                    Job::Webhook { url, body, .. } => poster.post(url, body),
                    Job::Publish { .. } => Err("publish job on webhook queue".into()),
                },
                "http".into(),
            ))
            .expect("spawn webhook worker");
        let p = std::thread::Builder::new()
            .name("dtf-publish".into())
            .spawn(worker(
                prx,
                retry,
                record.clone(),
                move |job| match job {
                    Job::Publish { topic, payload, .. } => {
                        publisher.publish(topic, &serde_json::to_vec(payload).expect("json serializes"))
                    }
                    Job::Webhook { .. } => Err("webhook job on publish queue".into()),
                },
                transport,
            ))
            .expect("spawn publish worker");
        Self {
            webhook_tx: Some(wtx),
            publish_tx: Some(ptx),
            workers: vec![w, p],
            record,
        }
    }

    /// Queues a job. A full queue dead-letters the job at once instead of
    /// blocking the caller.
    pub fn submit(&self, job: Job) {
        let tx = match job {
            Job::Webhook { .. } => self.webhook_tx.as_ref(),
            Job::Publish { .. } => self.publish_tx.as_ref(),
        };
        let Some(tx) = tx else { return };
        match tx.try_send(job) {
            Ok(()) => {}
            Err(TrySendError::Full(job)) | Err(TrySendError::Disconnected(job)) => {
                let outcome = DeliveryOutcome::DeadLettered {
                    attempts: 0,
                    last_error: "outbound queue full".into(),
                };
                (self.record)(outcome_record(&job, &outcome, "none"));
            }
        }
    }

    /// Drains queued jobs and stops the workers.
    pub fn shutdown(mut self) {
        self.webhook_tx.take();
        self.publish_tx.take();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}
