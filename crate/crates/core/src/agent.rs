//! Autonomous agent: routes alerts and condition estimates to actions and
//! decides when to stop a machine.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::knowledge::Alert;
use crate::labeler::{classify_condition, ConditionEstimate, ManagementPolicy};

#[derive(Debug, Error, PartialEq)]
pub enum AgentError {
    #[error("invalid route `{route}`: {reason}")]
    InvalidRoute { route: String, reason: String },
    #[error("a stop is already pending for machine `{0}`")]
    StopPending(String),
    #[error("debounce must be at least 1")]
    InvalidDebounce,
    #[error("delivery failed after {attempts} attempts: {last_error}")]
    DeliveryFailure { attempts: usize, last_error: String },
    #[error("route table: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Notify,
    PublishMqtt,
    StopMachine,
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActionKind::Notify => "notify",
            ActionKind::PublishMqtt => "publish_mqtt",
            ActionKind::StopMachine => "stop_machine",
        })
    }
}

/// What a route reacts to. Alerts match when their code is listed (if
/// `codes` is set) and their subject matches `machine` (if set). Estimates
/// carry no code, so they only match machine-only routes, and only when
/// they call for intervention.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteMatch {
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub codes: BTreeSet<i64>,
    /// Glob over machine ids, e.g. `2F*`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub machine: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRoute {
    pub name: String,
    #[serde(rename = "match")]
    pub matcher: RouteMatch,
    pub action: ActionKind,
    /// Webhook URL for `notify`, topic for `publish_mqtt` (may contain
    /// `{machine}`), free-form for `stop_machine`.
    pub target: String,
}

impl ActionRoute {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |reason: &str| AgentError::InvalidRoute {
            route: self.name.clone(),
            reason: reason.into(),
        };
        if self.target.trim().is_empty() {
            return Err(bad("target is empty"));
        }
        if self.matcher.codes.is_empty() && self.matcher.machine.is_none() {
            return Err(bad("match needs codes or a machine pattern"));
        }
        if let Some(p) = &self.matcher.machine {
            glob::Pattern::new(p).map_err(|e| bad(&format!("machine pattern: {e}")))?;
        }
        Ok(())
    }

    fn machine_ok(&self, machine: &str) -> bool {
        match &self.matcher.machine {
            None => true,
            Some(p) => glob::Pattern::new(p).is_ok_and(|p| p.matches(machine)),
        }
    }

    pub fn matches(&self, event: &AgentEvent) -> bool {
        match event {
            AgentEvent::Alert(a) => {
                (self.matcher.codes.is_empty() || self.matcher.codes.contains(&a.code)) && self.machine_ok(&a.subject)
            }
            AgentEvent::Estimate(e) => self.matcher.codes.is_empty() && e.intervene == 1 && self.machine_ok(&e.machine_id),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteTable {
    pub routes: Vec<ActionRoute>,
}

impl RouteTable {
    pub fn new(routes: Vec<ActionRoute>) -> Result<Self, AgentError> {
        let mut names = BTreeSet::new();
        for r in &routes {
            r.validate()?;
            if !names.insert(r.name.as_str()) {
                return Err(AgentError::InvalidRoute {
                    route: r.name.clone(),
                    reason: "duplicate route name".into(),
                });
            }
        }
        Ok(Self { routes })
    }

    /// Accepts `{"routes": [...]}` or a bare array.
    pub fn from_json(text: &str) -> Result<Self, AgentError> {
        let value: Value = serde_json::from_str(text).map_err(|e| AgentError::Config(e.to_string()))?;
        let routes = match value {
            Value::Array(_) => value,
            Value::Object(mut m) => m.remove("routes").unwrap_or(Value::Array(vec![])),
            _ => return Err(AgentError::Config("expected an array or an object".into())),
        };
        let routes: Vec<ActionRoute> = serde_json::from_value(routes).map_err(|e| AgentError::Config(e.to_string()))?;
        Self::new(routes)
    }

    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let text = std::fs::read_to_string(path).map_err(|e| AgentError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "event", rename_all = "snake_case")]
pub enum AgentEvent {
    Alert(Alert),
    Estimate(ConditionEstimate),
}

impl AgentEvent {
    pub fn machine_id(&self) -> &str {
        match self {
            AgentEvent::Alert(a) => &a.subject,
            AgentEvent::Estimate(e) => &e.machine_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub route: String,
    pub action: ActionKind,
    /// Target with `{machine}` substituted.
    pub target: String,
    pub machine_id: String,
    pub event: AgentEvent,
}

impl Action {
    /// Payload for the write-ahead `action` log record.
    pub fn planned_record(&self) -> Value {
        json!({
            "phase": "planned",
            "route": self.route,
            "action": self.action.to_string(),
            "target": self.target,
            "machine_id": self.machine_id,
            "event": self.event,
        })
    }

    /// Webhook body: the event plus the route name.
    pub fn webhook_body(&self) -> Value {
        json!({ "route": self.route, "event": self.event })
    }
}

/// One action per matching route, in route declaration order.
pub fn dispatch(event: &AgentEvent, routes: &RouteTable) -> Vec<Action> {
    let machine = event.machine_id();
    routes
        .routes
        .iter()
        .filter(|r| r.matches(event))
        .map(|r| Action {
            route: r.name.clone(),
            action: r.action,
            target: r.target.replace("{machine}", machine),
            machine_id: machine.to_string(),
            event: event.clone(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    PolicyThreshold,
    RuleAlert,
    Manual,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::PolicyThreshold => "policy_threshold",
            StopReason::RuleAlert => "rule_alert",
            StopReason::Manual => "manual",
        })
    }
}

/// Pointer to the record that justified a stop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopCommand {
    pub machine_id: String,
    pub reason: StopReason,
    pub evidence: Evidence,
    pub issued_at: i64,
}

impl StopCommand {
    pub const TOPIC_TEMPLATE: &'static str = "plant/{machine}/cmd";

    pub fn topic(&self) -> String {
        Self::TOPIC_TEMPLATE.replace("{machine}", &self.machine_id)
    }

    /// Device payload: `{"cmd": "stop", "reason": ...}`.
    pub fn mqtt_payload(&self) -> Value {
        json!({ "cmd": "stop", "reason": self.reason.to_string() })
    }
}

pub const DEFAULT_DEBOUNCE: usize = 3;

#[derive(Debug, Clone, Default)]
struct StopState {
    run: usize,
    pending: bool,
}

/// Per-machine debounce and pending-stop tracking.
#[derive(Debug, Clone)]
pub struct StopEvaluator {
    debounce: usize,
    machines: BTreeMap<String, StopState>,
}

impl StopEvaluator {
    pub fn new(debounce: usize) -> Result<Self, AgentError> {
        if debounce == 0 {
            return Err(AgentError::InvalidDebounce);
        }
        Ok(Self {
            debounce,
            machines: BTreeMap::new(),
        })
    }

    pub fn debounce(&self) -> usize {
        self.debounce
    }

    pub fn is_pending(&self, machine: &str) -> bool {
        self.machines.get(machine).is_some_and(|s| s.pending)
    }

    /// Restores pending state, e.g. after replaying a log.
    pub fn mark_pending(&mut self, machine: &str) {
        self.machines.entry(machine.to_string()).or_default().pending = true;
    }

    /// Feeds one estimate, reclassified under `policy`. Returns a command
    /// when the run of intervene estimates reaches the debounce and no stop
    /// is pending. An intervene = 0 estimate resets the run and re-arms.
    pub fn observe(
        &mut self,
        estimate: &ConditionEstimate,
        policy: &ManagementPolicy,
        evidence_seq: Option<u64>,
    ) -> Option<StopCommand> {
        let state = self.machines.entry(estimate.machine_id.clone()).or_default();
        if classify_condition(estimate.expected_value, policy) == 0 {
            state.run = 0;
            state.pending = false;
            return None;
        }
        state.run += 1;
        if state.run >= self.debounce && !state.pending {
            state.pending = true;
            return Some(StopCommand {
                machine_id: estimate.machine_id.clone(),
                reason: StopReason::PolicyThreshold,
                evidence: Evidence {
                    kind: "estimate".into(),
                    seq: evidence_seq,
                    note: None,
                },
                issued_at: estimate.timestamp,
            });
        }
        None
    }

    /// Stop requested by a `stop_machine` route or an operator.
    pub fn request(
        &mut self,
        machine: &str,
        reason: StopReason,
        evidence: Evidence,
        issued_at: i64,
    ) -> Result<StopCommand, AgentError> {
        let state = self.machines.entry(machine.to_string()).or_default();
        if state.pending {
            return Err(AgentError::StopPending(machine.to_string()));
        }
        state.pending = true;
        Ok(StopCommand {
            machine_id: machine.to_string(),
            reason,
            evidence,
            issued_at,
        })
    }
}

/// Runs a fresh evaluator over `estimates`.
pub fn evaluate_stop<'a, I>(estimates: I, policy: &ManagementPolicy, debounce: usize) -> Result<Vec<StopCommand>, AgentError>
where
    I: IntoIterator<Item = &'a ConditionEstimate>,
{
    let mut ev = StopEvaluator::new(debounce)?;
    Ok(estimates.into_iter().filter_map(|e| ev.observe(e, policy, None)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: usize,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 5,
            base_delay: Duration::from_secs(1),
            max_delay: Duration::from_secs(60),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry `i` (0-based): `base * 2^i`, capped.
    pub fn delay(&self, i: usize) -> Duration {
        let factor = 1u32.checked_shl(i as u32).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }

    pub fn schedule(&self) -> Vec<Duration> {
        (0..self.max_retries).map(|i| self.delay(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeliveryOutcome {
    Delivered { attempts: usize },
    DeadLettered { attempts: usize, last_error: String },
}

impl DeliveryOutcome {
    pub fn into_result(self) -> Result<usize, AgentError> {
        match self {
            DeliveryOutcome::Delivered { attempts } => Ok(attempts),
            DeliveryOutcome::DeadLettered { attempts, last_error } => {
                Err(AgentError::DeliveryFailure { attempts, last_error })
            }
        }
    }
}

/// Calls `attempt` once plus up to `policy.max_retries` more times until it
/// succeeds; `sleep` is called with each backoff delay. `attempt` receives
/// the 1-based attempt number.
pub fn deliver_with_retry(
    policy: &RetryPolicy,
    mut attempt: impl FnMut(usize) -> Result<(), String>,
    mut sleep: impl FnMut(Duration),
) -> DeliveryOutcome {
    let mut last_error = String::new();
    for i in 0..=policy.max_retries {
        if i > 0 {
            sleep(policy.delay(i - 1));
        }
        match attempt(i + 1) {
            Ok(()) => return DeliveryOutcome::Delivered { attempts: i + 1 },
            Err(e) => last_error = e,
        }
    }
    DeliveryOutcome::DeadLettered {
        attempts: policy.max_retries + 1,
        last_error,
    }
}
