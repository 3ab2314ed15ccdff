//! `dtf serve`: wires the log, pipeline, outbox, optional MQTT client and
//! HTTP API together.

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use anyhow::Context;
use tokio::sync::{mpsc, watch};

use dtf_core::agent::RetryPolicy;
use dtf_core::ingest::{InProcBus, SensorReading, TopicRoute};
use dtf_core::store::{EventLog, ModelRegistry};

use crate::api::{router, AppState};
use crate::config::{PipelineConfig, Resolved};
use crate::outbound::{BusPublisher, HttpPoster, Outbox, Publisher, QUEUE_CAPACITY};
use crate::runtime::{Pipeline, PipelineParts, Runtime};

pub struct ServeOptions {
    pub config: PipelineConfig,
    pub resolved: Resolved,
    pub token: Option<String>,
    pub retry: RetryPolicy,
    /// Bus used for device commands when no broker is configured.
    pub bus: InProcBus,
}

/// Parses `mqtt://host[:port]` (port defaults to 1883).
pub fn parse_broker(url: &str) -> anyhow::Result<(String, u16)> {
    let u = url::Url::parse(url).with_context(|| format!("broker url `{url}`"))?;
    if u.scheme() != "mqtt" && u.scheme() != "tcp" {
        anyhow::bail!("broker url must use mqtt://, got `{url}`");
    }
    let host = u.host_str().context("broker url has no host")?.to_string();
    Ok((host, u.port().unwrap_or(1883)))
}

struct MqttPublisher(rumqttc::Client);

impl Publisher for MqttPublisher {
    fn name(&self) -> &str {
        "mqtt"
    }

    fn publish(&mut self, topic: &str, payload: &[u8]) -> Result<(), String> {
        self.0
            .publish(topic, rumqttc::QoS::AtLeastOnce, false, payload.to_vec())
            .map_err(|e| e.to_string())
    }
}

/// Connects to the broker, forwards decoded readings into `ingest`, and
/// returns a publisher for commands.
fn start_mqtt(broker: &str, route: TopicRoute, ingest: mpsc::Sender<SensorReading>) -> anyhow::Result<MqttPublisher> {
    let (host, port) = parse_broker(broker)?;
    let id = format!("dtf-serve-{}", std::process::id());
    let mut opts = rumqttc::MqttOptions::new(id, host, port);
    opts.set_keep_alive(std::time::Duration::from_secs(30));
    let (client, mut connection) = rumqttc::Client::new(opts, QUEUE_CAPACITY);
    client
        .subscribe(route.wildcard_filter(), rumqttc::QoS::AtLeastOnce)
        .context("mqtt subscribe")?;
    std::thread::Builder::new()
        .name("dtf-mqtt".into())
        .spawn(move || {
            for event in connection.iter() {
                match event {
                    Ok(rumqttc::Event::Incoming(rumqttc::Packet::Publish(p))) => {
                        if p.topic.ends_with("/cmd") {
                            continue;
                        }
                        match route.decode(&p.topic, &p.payload) {
                            Ok(r) => {
                                if ingest.blocking_send(r).is_err() {
                                    break;
                                }
                            }
                            Err(e) => tracing::warn!(topic = %p.topic, error = %e, "dropping payload"),
                        }
                    }
                    Ok(_) => {}
                    Err(e) => {
                        tracing::warn!(error = %e, "mqtt connection error; retrying");
                        std::thread::sleep(std::time::Duration::from_secs(1));
                    }
                }
            }
        })?;
    Ok(MqttPublisher(client))
}

/// Runs until `shutdown` resolves. `on_ready` receives the bound address.
pub async fn serve<F, R>(opts: ServeOptions, shutdown: F, on_ready: R) -> anyhow::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
    R: FnOnce(SocketAddr),
{
    let cfg = &opts.config;
    let (log, report) = EventLog::open(&cfg.log_dir).with_context(|| format!("event log {}", cfg.log_dir.display()))?;
    if report.truncated_records > 0 {
        tracing::warn!(bytes = report.truncated_bytes, "dropped a torn record at the end of the event log");
    }
    tracing::info!(records = report.records, "event log recovered");
    let pipeline = Pipeline::new(PipelineParts {
        log,
        specs: opts.resolved.specs.clone(),
        labeler: opts.resolved.labeler,
        policy: opts.resolved.policy,
        rules: opts.resolved.rules.clone(),
        routes: opts.resolved.routes.clone(),
        debounce: cfg.debounce,
    })?;
    let runtime = Runtime::new(pipeline);

    let (ingest_tx, mut ingest_rx) = mpsc::channel::<SensorReading>(QUEUE_CAPACITY);
    let publisher: Box<dyn Publisher> = match &cfg.broker {
        Some(b) => Box::new(start_mqtt(b, cfg.topic.clone(), ingest_tx.clone())?),
        None => Box::new(BusPublisher(opts.bus.clone())),
    };
    // The blocking client owns a runtime of its own and must not be built on an async worker.
    let poster = tokio::task::spawn_blocking(HttpPoster::new)
        .await?
        .map_err(anyhow::Error::msg)?;
    runtime.attach_outbox(Outbox::start(Box::new(poster), publisher, opts.retry, runtime.recorder()));

    let worker_rt = runtime.clone();
    let consumer = std::thread::Builder::new().name("dtf-pipeline".into()).spawn(move || {
        while let Some(r) = ingest_rx.blocking_recv() {
            if let Err(e) = worker_rt.ingest(&r) {
                tracing::error!(error = %e, "pipeline error");
            }
        }
    })?;

    let (closing_tx, closing_rx) = watch::channel(false);
    let state = AppState {
        runtime: runtime.clone(),
        ingest: ingest_tx,
        registry: ModelRegistry::new(cfg.models_dir.clone()),
        token: opts.token.clone(),
        closing: closing_rx,
    };
    let listener = tokio::net::TcpListener::bind(&cfg.bind)
        .await
        .with_context(|| format!("bind {}", cfg.bind))?;
    let addr = listener.local_addr()?;
    on_ready(addr);
    let closing_tx = Arc::new(closing_tx);
    let signal = {
        let closing_tx = closing_tx.clone();
        async move {
            shutdown.await;
            let _ = closing_tx.send(true);
        }
    };
    axum::serve(listener, router(state)).with_graceful_shutdown(signal).await?;

    // The router (and its ingest sender) is gone; drain the pipeline, then
    // the outbox.
    tokio::task::spawn_blocking(move || {
        let _ = consumer.join();
        runtime.shutdown();
    })
    .await?;
    Ok(())
}
