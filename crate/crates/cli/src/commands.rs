use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;

use anyhow::Context;
use serde_json::{json, Value};

use dtf_core::agent::RetryPolicy;
use dtf_core::automl::{compare_models, default_zoo, reports_to_table, tune_model, Objective};
use dtf_core::ingest::{parse_cs2_row, parse_header, replay, Cs2Layout, InProcBus, ReplaySpeed, SensorReading};
use dtf_core::knowledge::{answer_competency_query, run_inference, FactStore, KnowledgeError, RuleSet};
use dtf_core::labeler::{ConditionEstimate, FleetLabeler, PolicyStyle};
use dtf_core::preprocess::{prepare, Dataset, PrepareOptions, PreprocessError};
use dtf_core::store::{save_model, ModelRegistry};
use dtf_service::config::{PipelineConfig, PolicyConfig};
use dtf_service::server::{parse_broker, serve, ServeOptions};

use crate::{Cli, CliError, Command, InferArgs, LabelArgs, ReplayArgs, ServeArgs, TrainArgs};

type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl std::fmt::Display) -> CliError {
    CliError::Usage(msg.to_string())
}

pub fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(p) => PipelineConfig::load(p).map_err(usage)?,
        None => PipelineConfig::default(),
    };
    match cli.command {
        Command::Label(a) => label(config, a),
        Command::Train(a) => train(config, a, cli.json),
        Command::Infer(a) => infer(config, a),
        Command::Replay(a) => replay_cmd(config, a, cli.json),
        Command::Serve(a) => serve_cmd(config, a),
    }
}

fn apply_policy(cfg: &mut PipelineConfig, policy: Option<&str>, threshold: Option<f64>) -> Result<()> {
    if let Some(p) = policy {
        let style: PolicyStyle = p.parse().map_err(usage)?;
        cfg.policy = PolicyConfig { style, threshold: None };
    }
    if threshold.is_some() {
        cfg.policy.threshold = threshold;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// label
// ---------------------------------------------------------------------------

fn label(mut cfg: PipelineConfig, a: LabelArgs) -> Result<()> {
    if let Some(s) = a.specs {
        cfg.specs = Some(s);
    }
    if let Some(w) = a.window {
        cfg.window_size = w;
    }
    if let Some(z) = a.z {
        cfg.z = z;
    }
    apply_policy(&mut cfg, a.policy.as_deref(), a.threshold)?;
    let resolved = cfg.resolve().map_err(usage)?;

    let input = File::open(&a.csv).with_context(|| format!("{}", a.csv.display()))?;
    let mut lines = BufReader::new(input).lines();
    let out: Box<dyn Write> = match &a.output {
        Some(p) => Box::new(File::create(p).with_context(|| format!("{}", p.display()))?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(out);

    let header = match lines.next() {
        Some(l) => parse_header(&l.context("reading header")?).map_err(usage)?,
        None => return Ok(()),
    };
    let layout = Cs2Layout::from_header(&header, &resolved.sensor_map).map_err(usage)?;
    let sensors = layout.sensors();
    let mut machines: Vec<String> = sensors.iter().map(|(m, _)| m.clone()).collect();
    machines.sort();
    machines.dedup();
    for m in &machines {
        let specs = resolved
            .specs
            .for_machine(m)
            .ok_or_else(|| usage(format!("no sensor specs for machine `{m}`")))?;
        for id in specs.sensor_ids() {
            if !sensors.iter().any(|(mm, s)| mm == m && s == id) {
                return Err(usage(format!("machine `{m}` has no column for sensor `{id}`")));
            }
        }
    }

    let passthrough: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.as_str() != "label")
        .map(|(i, _)| i)
        .collect();
    let sensor_cols: Vec<&String> = header
        .iter()
        .filter(|h| !matches!(h.as_str(), "label" | "timestamp" | "ts" | "" | "index"))
        .collect();
    let mut out_header: Vec<String> = passthrough.iter().map(|&i| header[i].clone()).collect();
    out_header.extend(sensor_cols.iter().map(|c| format!("{c}_label")));
    if machines.len() == 1 {
        out_header.push("E".into());
        out_header.push("intervene".into());
    } else {
        for m in &machines {
            out_header.push(format!("{m}_E"));
            out_header.push(format!("{m}_intervene"));
        }
    }
    out_header.push("label".into());
    w.write_record(&out_header).context("writing output")?;

    let mut fleet = FleetLabeler::new(resolved.specs.clone(), resolved.labeler, resolved.policy).map_err(usage)?;
    let mut row_no = 0usize;
    let mut skipped = 0usize;
    for line in lines {
        let line = line.context("reading input")?;
        if line.trim().is_empty() {
            continue;
        }
        row_no += 1;
        let row = match parse_cs2_row(&line, &layout, row_no as i64 - 1) {
            Ok(r) => r,
            Err(e) => {
                tracing::warn!(row = row_no, error = %e, "skipping malformed row");
                skipped += 1;
                continue;
            }
        };
        let mut fresh: BTreeMap<String, ConditionEstimate> = BTreeMap::new();
        for r in &row.readings {
            if let Some(est) = fleet.push(r).map_err(|e| anyhow::anyhow!("row {row_no}: {e}"))? {
                fresh.insert(est.machine_id.clone(), est);
            }
        }
        if fresh.len() != machines.len() {
            // Warm-up: some machine has not produced a full window yet.
            continue;
        }
        let fields = dtf_core::ingest::split_csv_line(&line).map_err(|e| anyhow::anyhow!("row {row_no}: {e}"))?;
        let mut rec: Vec<String> = passthrough.iter().map(|&i| fields[i].clone()).collect();
        for (m, s) in &sensors {
            let l = fresh[m]
                .labels
                .iter()
                .find(|l| &l.sensor_id == s)
                .map(|l| l.label.to_string())
                .unwrap_or_default();
            rec.push(l);
        }
        let mut any = 0u8;
        for m in &machines {
            let est = &fresh[m];
            rec.push(format!("{}", est.expected_value));
            rec.push(est.intervene.to_string());
            any = any.max(est.intervene);
        }
        rec.push(any.to_string());
        w.write_record(&rec).context("writing output")?;
    }
    w.flush().context("writing output")?;
    if skipped > 0 {
        eprintln!("skipped {skipped} malformed row(s)");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn train(cfg: PipelineConfig, a: TrainArgs, as_json: bool) -> Result<()> {
    let target = a.target.unwrap_or(cfg.target.clone());
    let k = a.k.unwrap_or(cfg.folds);
    let seed = a.seed.unwrap_or(cfg.seed);
    let objective: Objective = a.objective.parse().map_err(usage)?;
    if k < 2 {
        return Err(usage("--k must be at least 2"));
    }
    let file = File::open(&a.csv).with_context(|| format!("{}", a.csv.display()))?;
    let data = Dataset::from_csv(BufReader::new(file), Some(&target)).map_err(|e| match e {
        PreprocessError::MissingColumn(_) => usage(e),
        other => CliError::Runtime(other.into()),
    })?;
    let opts = PrepareOptions {
        remove_outliers: (a.outlier_z > 0.0).then_some(a.outlier_z),
        normalize: true,
        select_k: a.select,
        undersample: a.undersample,
        seed,
    };
    let (prepared, prep) = prepare(&data, &opts).map_err(anyhow::Error::from)?;
    let zoo = default_zoo(seed);
    let reports = compare_models(&prepared, &zoo, k, seed).map_err(anyhow::Error::from)?;
    let best = reports.first().context("empty model comparison")?;
    let (mut fitted, tuned) = tune_model(&best.model, &prepared, k, objective).map_err(anyhow::Error::from)?;
    if let Some(n) = &prep.normalizer {
        fitted = fitted.with_normalizer(n);
    }

    let artifact = match &a.output {
        Some(p) => {
            save_model(p, &fitted).map_err(anyhow::Error::from)?;
            let rp = p.with_extension("report.json");
            std::fs::write(&rp, serde_json::to_string_pretty(&tuned).map_err(anyhow::Error::from)?)
                .with_context(|| format!("{}", rp.display()))?;
            p.clone()
        }
        None => {
            let reg = ModelRegistry::new(cfg.models_dir.clone());
            reg.save(&a.name, &fitted, Some(&tuned)).map_err(anyhow::Error::from)?;
            reg.dir().join(format!("{}.model.json", a.name))
        }
    };

    if as_json {
        let v = json!({
            "preprocess": prep,
            "comparison": reports,
            "tuned": tuned,
            "artifact": artifact,
        });
        println!("{}", serde_json::to_string_pretty(&v).map_err(anyhow::Error::from)?);
    } else {
        print!("{}", reports_to_table(&reports));
        println!();
        println!("tuned {}: {}", tuned.model.kind.display_name(), serde_json::to_string(&tuned.model.hyperparams).unwrap_or_default());
        print!("{}", reports_to_table(std::slice::from_ref(&tuned)));
        println!("saved {}", artifact.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

fn infer(mut cfg: PipelineConfig, a: InferArgs) -> Result<()> {
    if !a.rules.is_empty() {
        cfg.rules = a.rules.clone();
    }
    let rules: RuleSet = cfg.resolve().map_err(usage)?.rules;
    let params: Value = serde_json::from_str(&a.params).map_err(|e| usage(format!("--params: {e}")))?;
    let mut store = FactStore::new(rules.schema.clone());
    let file = File::open(&a.facts).with_context(|| format!("{}", a.facts.display()))?;
    store.import_jsonl(BufReader::new(file)).map_err(|e| match e {
        KnowledgeError::Io(_) => CliError::Runtime(e.into()),
        other => usage(format!("{}: {other}", a.facts.display())),
    })?;
    let result = run_inference(&mut store, &rules).map_err(anyhow::Error::from)?;
    let mut out = json!({
        "alerts": result.alerts,
        "inferred": result.inferred.len(),
        "iterations": result.iterations,
    });
    if let Some(q) = &a.query {
        let answer = answer_competency_query(&store, q, &params).map_err(|e| match e {
            KnowledgeError::UnknownQuery(_) | KnowledgeError::InvalidParameter(_) => usage(e),
            other => CliError::Runtime(other.into()),
        })?;
        out["query"] = json!({ "id": q, "result": answer });
    }
    println!("{}", serde_json::to_string_pretty(&out).map_err(anyhow::Error::from)?);
    Ok(())
}

// ---------------------------------------------------------------------------
// replay
// ---------------------------------------------------------------------------

enum Sink {
    Stdout(std::io::StdoutLock<'static>),
    Http {
        client: reqwest::blocking::Client,
        url: String,
        token: Option<String>,
        batch: Vec<SensorReading>,
    },
    Mqtt {
        client: rumqttc::Client,
        pump: std::thread::JoinHandle<()>,
        route: dtf_core::ingest::TopicRoute,
    },
}

impl Sink {
    fn open(target: Option<&str>, cfg: &PipelineConfig) -> Result<Self> {
        match target {
            None => Ok(Sink::Stdout(std::io::stdout().lock())),
            Some(t) if t.starts_with("http://") || t.starts_with("https://") => {
                let client = reqwest::blocking::Client::builder()
                    .timeout(std::time::Duration::from_secs(10))
                    .build()
                    .map_err(anyhow::Error::from)?;
                Ok(Sink::Http {
                    client,
                    url: format!("{}/ingest", t.trim_end_matches('/')),
                    token: std::env::var("DT_API_TOKEN").ok().filter(|t| !t.is_empty()),
                    batch: Vec::new(),
                })
            }
            Some(t) if t.starts_with("mqtt://") => {
                let (host, port) = parse_broker(t).map_err(usage)?;
                let opts = rumqttc::MqttOptions::new(format!("dtf-replay-{}", std::process::id()), host, port);
                let (client, mut connection) = rumqttc::Client::new(opts, 1024);
                let pump = std::thread::spawn(move || {
                    for ev in connection.iter() {
                        if let Err(e) = ev {
                            tracing::debug!(error = %e, "mqtt connection closed");
                            break;
                        }
                    }
                });
                Ok(Sink::Mqtt {
                    client,
                    pump,
                    route: cfg.topic.clone(),
                })
            }
            Some(t) => Err(usage(format!("--target must be http://, https:// or mqtt://, got `{t}`"))),
        }
    }

    fn flush_http(client: &reqwest::blocking::Client, url: &str, token: &Option<String>, batch: &mut Vec<SensorReading>) -> Result<()> {
        if batch.is_empty() {
            return Ok(());
        }
        let mut req = client.post(url).json(&*batch);
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().with_context(|| format!("POST {url}"))?;
        if !resp.status().is_success() {
            return Err(CliError::Runtime(anyhow::anyhow!("POST {url}: {}", resp.status())));
        }
        batch.clear();
        Ok(())
    }

    fn send(&mut self, r: SensorReading) -> Result<()> {
        match self {
            Sink::Stdout(out) => {
                serde_json::to_writer(&mut *out, &r).map_err(anyhow::Error::from)?;
                writeln!(out).context("stdout")?;
                Ok(())
            }
            Sink::Http { client, url, token, batch } => {
                // One POST per source row: readings sharing machine and timestamp.
                if let Some(prev) = batch.last() {
                    if prev.timestamp != r.timestamp || prev.machine_id != r.machine_id {
                        Self::flush_http(client, url, token, batch)?;
                    }
                }
                batch.push(r);
                Ok(())
            }
            Sink::Mqtt { client, route, .. } => {
                let (topic, payload) = route.encode(&r);
                client
                    .publish(topic, rumqttc::QoS::AtLeastOnce, false, payload)
                    .map_err(|e| CliError::Runtime(anyhow::anyhow!("mqtt publish: {e}")))
            }
        }
    }

    fn finish(self) -> Result<()> {
        match self {
            Sink::Stdout(mut out) => out.flush().context("stdout").map_err(Into::into),
            Sink::Http { client, url, token, mut batch } => Self::flush_http(&client, &url, &token, &mut batch),
            Sink::Mqtt { client, pump, .. } => {
                let _ = client.disconnect();
                let _ = pump.join();
                Ok(())
            }
        }
    }
}

fn replay_cmd(cfg: PipelineConfig, a: ReplayArgs, as_json: bool) -> Result<()> {
    let speed: ReplaySpeed = a.speed.parse().map_err(usage)?;
    let map = cfg.sensor_map.clone().unwrap_or_else(dtf_core::ingest::SensorMap::furnace_defaults);
    let mut stream = replay(&a.csv, speed, &map).map_err(|e| match e {
        dtf_core::ingest::IngestError::FileNotFound(_) | dtf_core::ingest::IngestError::Io(_) => {
            CliError::Runtime(e.into())
        }
        other => usage(other),
    })?;
    let mut sink = Sink::open(a.target.as_deref(), &cfg)?;
    for r in stream.by_ref() {
        sink.send(r)?;
    }
    sink.finish()?;
    let report = stream.report();
    if as_json {
        eprintln!("{}", serde_json::to_string(report).map_err(anyhow::Error::from)?);
    } else {
        eprintln!(
            "replayed {} reading(s) from {} row(s), {} skipped",
            report.readings_emitted,
            report.rows_read,
            report.skipped.len()
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// serve
// ---------------------------------------------------------------------------

fn override_path(slot: &mut PathBuf, v: Option<PathBuf>) {
    if let Some(p) = v {
        *slot = p;
    }
}

fn serve_cmd(mut cfg: PipelineConfig, a: ServeArgs) -> Result<()> {
    if let Some(b) = a.bind {
        cfg.bind = b;
    }
    override_path(&mut cfg.log_dir, a.log_dir);
    override_path(&mut cfg.models_dir, a.models_dir);
    if a.broker.is_some() {
        cfg.broker = a.broker;
    }
    if a.specs.is_some() {
        cfg.specs = a.specs;
    }
    if a.routes.is_some() {
        cfg.routes = a.routes;
    }
    if let Some(d) = a.debounce {
        cfg.debounce = d;
    }
    if let Some(w) = a.window {
        cfg.window_size = w;
    }
    apply_policy(&mut cfg, a.policy.as_deref(), a.threshold)?;
    if let Some(b) = &cfg.broker {
        parse_broker(b).map_err(usage)?;
    }
    let resolved = cfg.resolve().map_err(usage)?;
    let opts = ServeOptions {
        config: cfg,
        resolved,
        token: std::env::var("DT_API_TOKEN").ok().filter(|t| !t.is_empty()),
        retry: RetryPolicy::default(),
        bus: InProcBus::new(),
    };
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting runtime")?;
    rt.block_on(serve(opts, shutdown_signal(), |addr| {
        println!("listening on http://{addr}");
        let _ = std::io::stdout().flush();
    }))?;
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutting down");
}
