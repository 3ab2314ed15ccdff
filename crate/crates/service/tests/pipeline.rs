use std::time::Duration;

use dtf_core::agent::{RetryPolicy, RouteTable};
use dtf_core::ingest::{InProcBus, SensorReading};
use dtf_core::knowledge::{sensor_equipment_rules, smart_maintenance_rules, RuleSet};
use dtf_core::labeler::{furnace_reference_specs, LabelerOptions, ManagementPolicy, PolicyStyle, SpecConfig};
use dtf_core::store::{EventKind, EventLog, EventRecord};
use dtf_service::outbound::{BusPublisher, Outbox, Poster};
use dtf_service::{FleetSnapshot, Pipeline, PipelineParts, Runtime};
use proptest::prelude::*;
use serde_json::Value;

const SENSORS: [&str; 7] = ["S1", "S2", "S3", "S4", "S5", "S6", "S7"];
const NORMAL: [f64; 7] = [1.2, 2400.0, 1.1, 2.5, 25.0, 30.0, 180.0];
const HOT: [f64; 7] = [1.2, 2400.0, 1.1, 2.5, 80.0, 90.0, 500.0];

fn policy() -> ManagementPolicy {
    ManagementPolicy::preset(PolicyStyle::Moderate)
}

fn routes() -> RouteTable {
    RouteTable::from_json(
        r#"{"routes": [{"name": "env", "match": {"codes": [100, 200]}, "action": "publish_mqtt", "target": "plant/{machine}/alerts"}]}"#,
    )
    .unwrap()
}

fn parts(log: EventLog, window: usize) -> PipelineParts {
    PipelineParts {
        log,
        specs: SpecConfig::single("*", furnace_reference_specs()),
        labeler: LabelerOptions { window_size: window, z: 1.96 },
        policy: policy(),
        rules: RuleSet::merge([smart_maintenance_rules(), sensor_equipment_rules()]).unwrap(),
        routes: routes(),
        debounce: 3,
    }
}

/// One row per tick, all seven sensors; rows from `hot_from` on are out of range.
fn furnace_rows(machine: &str, rows: usize, hot_from: usize) -> Vec<SensorReading> {
    let mut out = Vec::new();
    for i in 0..rows {
        let base = if i >= hot_from { HOT } else { NORMAL };
        for (k, s) in SENSORS.iter().enumerate() {
            let jitter = ((i * 7 + k) % 5) as f64 * 0.01 * base[k];
            out.push(SensorReading::new(machine, *s, 1_700_000_000 + 60 * i as i64, base[k] + jitter).unwrap());
        }
    }
    out
}

fn snapshot_from_log(records: &[EventRecord]) -> FleetSnapshot {
    FleetSnapshot::new(policy(), Vec::<String>::new()).replay(records)
}

#[test]
fn live_projection_equals_replay_and_survives_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let (log, _) = EventLog::open(dir.path()).unwrap();
    let mut p = Pipeline::new(parts(log, 10)).unwrap();
    for r in furnace_rows("F1", 40, 25).iter().chain(&furnace_rows("F2", 20, 100)) {
        p.process_reading(r).unwrap();
    }
    p.set_policy(Some("F2"), ManagementPolicy::preset(PolicyStyle::Aggressive)).unwrap();
    let records = p.scan(None, Default::default());
    let live = p.snapshot().clone();
    assert_eq!(live, snapshot_from_log(&records));
    assert!(live.machines["F1"].stop_pending);
    assert!(!live.machines["F2"].stop_pending);
    assert_eq!(live.machines["F2"].policy.threshold, 0.8);
    drop(p);

    let (log, _) = EventLog::open(dir.path()).unwrap();
    let p = Pipeline::new(parts(log, 10)).unwrap();
    assert_eq!(p.snapshot(), &live);
}

#[test]
fn stop_is_logged_before_its_emission() {
    struct NoHttp;
    impl Poster for NoHttp {
        fn post(&mut self, _: &str, _: &Value) -> Result<(), String> {
            Err("no network in tests".into())
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let (log, _) = EventLog::open(dir.path()).unwrap();
    let rt = Runtime::new(Pipeline::new(parts(log, 10)).unwrap());
    let bus = InProcBus::new();
    let cmds = bus.subscribe_raw("plant/+/cmd");
    let retry = RetryPolicy {
        max_retries: 0,
        base_delay: Duration::ZERO,
        max_delay: Duration::ZERO,
    };
    rt.attach_outbox(Outbox::start(Box::new(NoHttp), Box::new(BusPublisher(bus.clone())), retry, rt.recorder()));
    for r in furnace_rows("F1", 40, 20) {
        rt.ingest(&r).unwrap();
    }
    rt.shutdown();

    let msg = cmds.recv_timeout(Duration::from_secs(5)).unwrap();
    assert_eq!(msg.topic, "plant/F1/cmd");
    let body: Value = serde_json::from_slice(&msg.payload).unwrap();
    assert_eq!(body["cmd"], "stop");
    assert!(cmds.try_recv().is_err());

    let records = rt.lock().scan(None, Default::default());
    let stops: Vec<&EventRecord> = records.iter().filter(|r| r.kind == EventKind::Stop).collect();
    assert_eq!(stops.len(), 1);
    let stop = stops[0];
    let emitted: Vec<&EventRecord> = records
        .iter()
        .filter(|r| r.kind == EventKind::Action && r.payload["ref_seq"] == stop.seq && r.payload["phase"] == "emitted")
        .collect();
    assert_eq!(emitted.len(), 1);
    assert!(emitted[0].seq > stop.seq);
    assert_eq!(emitted[0].payload["transport"], "inproc");

    // The three estimates before the stop all call for intervention.
    let before: Vec<&EventRecord> = records
        .iter()
        .filter(|r| r.kind == EventKind::Estimate && r.seq < stop.seq)
        .collect();
    assert!(before.len() >= 3);
    assert!(before[before.len() - 3..].iter().all(|r| r.payload["intervene"] == 1));
}

fn reading() -> impl Strategy<Value = SensorReading> {
    (
        prop::sample::select(vec!["A", "B"]),
        0usize..7,
        0i64..50,
        prop_oneof![0.0..2.5f64, -10.0..6000.0f64],
    )
        .prop_map(|(m, k, t, v)| SensorReading::new(m, SENSORS[k], t, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn projection_is_a_fold_over_the_log(readings in prop::collection::vec(reading(), 0..300)) {
        let dir = tempfile::tempdir().unwrap();
        let (log, _) = EventLog::open_with(dir.path(), dtf_core::store::Durability::Flush).unwrap();
        let mut p = Pipeline::new(parts(log, 3)).unwrap();
        for r in &readings {
            p.process_reading(r).unwrap();
        }
        let records = p.scan(None, Default::default());
        prop_assert_eq!(p.snapshot(), &snapshot_from_log(&records));
        let seqs: Vec<u64> = records.iter().map(|r| r.seq).collect();
        prop_assert_eq!(seqs, (1..=records.len() as u64).collect::<Vec<_>>());
    }
}
