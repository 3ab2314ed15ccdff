//! The streaming pipeline: readings -> labeler -> knowledge -> agent -> log.

use std::sync::{Arc, Mutex, MutexGuard};

use serde_json::{json, Value};
use thiserror::Error;
use tokio::sync::watch;

use dtf_core::agent::{
    dispatch, Action, ActionKind, AgentEvent, Evidence, RouteTable, StopCommand, StopEvaluator, StopReason,
};
use dtf_core::ingest::SensorReading;
use dtf_core::knowledge::{eval_maintenance_rules, maintenance_facts, FactStore, RuleSet};
use dtf_core::labeler::{FleetLabeler, LabelerOptions, ManagementPolicy, SpecConfig};
use dtf_core::store::{EventKind, EventLog, EventRecord, SeqRange, StoreError};

use crate::outbound::{Job, Outbox};
use crate::projection::FleetSnapshot;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0}")]
    Config(String),
    #[error("unknown machine `{0}`")]
    UnknownMachine(String),
    #[error("a stop is already pending for `{0}`")]
    StopPending(String),
}

pub struct PipelineParts {
    pub log: EventLog,
    pub specs: SpecConfig,
    pub labeler: LabelerOptions,
    pub policy: ManagementPolicy,
    pub rules: RuleSet,
    pub routes: RouteTable,
    pub debounce: usize,
}

/// Single-writer pipeline state. Every mutation goes through [`Pipeline::append`].
pub struct Pipeline {
    log: EventLog,
    snapshot: FleetSnapshot,
    labeler: FleetLabeler,
    kb: FactStore,
    rules: RuleSet,
    routes: RouteTable,
    stops: StopEvaluator,
    committed: watch::Sender<u64>,
}

impl Pipeline {
    /// Rebuilds projections, policies and pending stops from the log.
    pub fn new(parts: PipelineParts) -> Result<Self, RuntimeError> {
        let known: Vec<String> = parts.specs.machines.keys().filter(|m| *m != "*").cloned().collect();
        let snapshot = FleetSnapshot::new(parts.policy, known).replay(parts.log.records());
        let mut labeler = FleetLabeler::new(parts.specs, parts.labeler, snapshot.default_policy)
            .map_err(|e| RuntimeError::Config(e.to_string()))?;
        for (m, p) in &snapshot.policy_overrides {
            labeler.set_policy(m, *p);
        }
        let mut stops = StopEvaluator::new(parts.debounce).map_err(|e| RuntimeError::Config(e.to_string()))?;
        for (m, st) in &snapshot.machines {
            if st.stop_pending {
                stops.mark_pending(m);
            }
        }
        let (committed, _) = watch::channel(parts.log.last_seq());
        Ok(Self {
            kb: FactStore::new(parts.rules.schema.clone()),
            log: parts.log,
            snapshot,
            labeler,
            rules: parts.rules,
            routes: parts.routes,
            stops,
            committed,
        })
    }

    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.committed.subscribe()
    }

    pub fn snapshot(&self) -> &FleetSnapshot {
        &self.snapshot
    }

    pub fn last_seq(&self) -> u64 {
        self.log.last_seq()
    }

    pub fn scan(&self, kinds: Option<&[EventKind]>, range: SeqRange) -> Vec<EventRecord> {
        self.log.scan(kinds, range)
    }

    pub fn records_after(&self, seq: u64, limit: usize) -> Vec<EventRecord> {
        let recs = self.log.records();
        let start = recs.partition_point(|r| r.seq <= seq);
        recs[start..recs.len().min(start + limit)].to_vec()
    }

    pub fn append(&mut self, kind: EventKind, payload: Value) -> Result<u64, RuntimeError> {
        let seq = self.log.append(kind, payload)?;
        let rec = self.log.get(seq).expect("just appended");
        self.snapshot.apply(rec);
        self.committed.send_replace(seq);
        Ok(seq)
    }

    /// Runs one reading through the pipeline. Returns delivery jobs to hand
    /// to the outbox once the caller has released the pipeline.
    pub fn process_reading(&mut self, r: &SensorReading) -> Result<Vec<Job>, RuntimeError> {
        self.append(EventKind::Reading, serde_json::to_value(r).expect("reading serializes"))?;
        let est = match self.labeler.push(r) {
            Ok(Some(est)) => est,
            Ok(None) => return Ok(Vec::new()),
            Err(e) => {
                tracing::warn!(machine = %r.machine_id, sensor = %r.sensor_id, error = %e, "reading not labelled");
                return Ok(Vec::new());
            }
        };
        let mut jobs = Vec::new();
        let est_seq = self.append(EventKind::Estimate, serde_json::to_value(&est).expect("estimate serializes"))?;
        let alerts = match eval_maintenance_rules(&mut self.kb, &self.rules, &est) {
            Ok(a) => a,
            Err(e) => {
                tracing::warn!(error = %e, "inference failed");
                Vec::new()
            }
        };
        for a in alerts {
            let seq = self.append(EventKind::Alert, serde_json::to_value(&a).expect("alert serializes"))?;
            self.handle_event(AgentEvent::Alert(a), seq, &mut jobs)?;
        }
        self.handle_event(AgentEvent::Estimate(est.clone()), est_seq, &mut jobs)?;
        let policy = self.labeler.policy_for(&est.machine_id);
        if let Some(cmd) = self.stops.observe(&est, &policy, Some(est_seq)) {
            self.issue_stop(cmd, &mut jobs)?;
        }
        Ok(jobs)
    }

    fn handle_event(&mut self, event: AgentEvent, event_seq: u64, jobs: &mut Vec<Job>) -> Result<(), RuntimeError> {
        let kind = match &event {
            AgentEvent::Alert(_) => "alert",
            AgentEvent::Estimate(_) => "estimate",
        };
        let ts = match &event {
            AgentEvent::Alert(a) => a.timestamp,
            AgentEvent::Estimate(e) => e.timestamp,
        };
        for action in dispatch(&event, &self.routes) {
            let planned = self.append(EventKind::Action, action.planned_record())?;
            match action.action {
                ActionKind::Notify => jobs.push(Job::Webhook {
                    ref_seq: planned,
                    url: action.target.clone(),
                    body: action.webhook_body(),
                }),
                ActionKind::PublishMqtt => jobs.push(Job::Publish {
                    ref_seq: planned,
                    topic: action.target.clone(),
                    payload: publish_payload(&action),
                }),
                ActionKind::StopMachine => {
                    let evidence = Evidence {
                        kind: kind.into(),
                        seq: Some(event_seq),
                        note: Some(format!("route {}", action.route)),
                    };
                    match self.stops.request(&action.machine_id, StopReason::RuleAlert, evidence, ts) {
                        Ok(cmd) => {
                            let stop_seq = self.issue_stop(cmd, jobs)?;
                            self.append(
                                EventKind::Action,
                                json!({"phase": "emitted", "ref_seq": planned, "transport": "agent", "stop_seq": stop_seq}),
                            )?;
                        }
                        Err(_) => {
                            self.append(
                                EventKind::Action,
                                json!({"phase": "skipped", "ref_seq": planned, "reason": "stop already pending"}),
                            )?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn issue_stop(&mut self, cmd: StopCommand, jobs: &mut Vec<Job>) -> Result<u64, RuntimeError> {
        let seq = self.append(EventKind::Stop, serde_json::to_value(&cmd).expect("command serializes"))?;
        let _ = self
            .kb
            .assert_all(maintenance_facts(&cmd.machine_id, cmd.issued_at, cmd.reason != StopReason::Manual));
        jobs.push(Job::Publish {
            ref_seq: seq,
            topic: cmd.topic(),
            payload: cmd.mqtt_payload(),
        });
        Ok(seq)
    }

    /// Operator stop. The machine must appear in config or the log.
    pub fn manual_stop(&mut self, machine: &str, note: Option<String>) -> Result<(u64, StopCommand, Vec<Job>), RuntimeError> {
        if !self.snapshot.machines.contains_key(machine) {
            return Err(RuntimeError::UnknownMachine(machine.into()));
        }
        let issued_at = self
            .snapshot
            .machines
            .get(machine)
            .and_then(|m| m.latest.as_ref().map(|e| e.timestamp))
            .unwrap_or_default();
        let evidence = Evidence {
            kind: "manual".into(),
            seq: None,
            note,
        };
        let cmd = self
            .stops
            .request(machine, StopReason::Manual, evidence, issued_at)
            .map_err(|_| RuntimeError::StopPending(machine.into()))?;
        let mut jobs = Vec::new();
        let seq = self.issue_stop(cmd.clone(), &mut jobs)?;
        Ok((seq, cmd, jobs))
    }

    /// Records a policy change; `machine = None` changes the default.
    pub fn set_policy(&mut self, machine: Option<&str>, policy: ManagementPolicy) -> Result<u64, RuntimeError> {
        let seq = self.append(
            EventKind::Policy,
            json!({"machine_id": machine, "style": policy.style, "threshold": policy.threshold}),
        )?;
        match machine {
            Some(m) => self.labeler.set_policy(m, policy),
            None => self.labeler.set_default_policy(policy),
        }
        Ok(seq)
    }

    pub fn record_outcome(&mut self, payload: Value) {
        if let Err(e) = self.append(EventKind::Action, payload) {
            tracing::error!(error = %e, "could not record delivery outcome");
        }
    }
}

fn publish_payload(action: &Action) -> Value {
    json!({"route": action.route, "event": action.event})
}

/// Shared handle: the pipeline behind one lock plus the outbox.
#[derive(Clone)]
pub struct Runtime {
    inner: Arc<Mutex<Pipeline>>,
    outbox: Arc<Mutex<Option<Outbox>>>,
}

impl Runtime {
    pub fn new(pipeline: Pipeline) -> Self {
        Self {
            inner: Arc::new(Mutex::new(pipeline)),
            outbox: Arc::new(Mutex::new(None)),
        }
    }

    pub fn lock(&self) -> MutexGuard<'_, Pipeline> {
        self.inner.lock().expect("pipeline lock poisoned")
    }

    pub fn attach_outbox(&self, outbox: Outbox) {
        *self.outbox.lock().expect("outbox lock poisoned") = Some(outbox);
    }

    /// A callback for the outbox that records delivery outcomes in the log.
    pub fn recorder(&self) -> crate::outbound::Recorder {
        let inner = Arc::downgrade(&self.inner);
        Box::new(move |payload| {
            if let Some(p) = inner.upgrade() {
                p.lock().expect("pipeline lock poisoned").record_outcome(payload);
            }
        })
    }

    pub fn submit(&self, jobs: Vec<Job>) {
        let guard = self.outbox.lock().expect("outbox lock poisoned");
        match guard.as_ref() {
            Some(o) => jobs.into_iter().for_each(|j| o.submit(j)),
            None if !jobs.is_empty() => tracing::warn!(n = jobs.len(), "no outbox attached; jobs dropped"),
            None => {}
        }
    }

    pub fn ingest(&self, r: &SensorReading) -> Result<(), RuntimeError> {
        let jobs = self.lock().process_reading(r)?;
        self.submit(jobs);
        Ok(())
    }

    /// Flushes pending deliveries and stops the outbox workers.
    pub fn shutdown(&self) {
        let outbox = self.outbox.lock().expect("outbox lock poisoned").take();
        if let Some(o) = outbox {
            o.shutdown();
        }
    }
}
