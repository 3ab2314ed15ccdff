use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn dtf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dtf"))
        .args(args)
        .env_remove("DT_CONFIG")
        .env_remove("DT_API_TOKEN")
        .output()
        .expect("run dtf")
}

fn fx(name: &str) -> String {
    fixtures().join(name).display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Furnace specs: (range low, range high, weight) for S1..S7.
const SPECS: [(f64, f64, f64); 7] = [
    (0.0, 2.5, 0.10),
    (0.0, 5000.0, 0.03),
    (0.0, 2.5, 0.10),
    (0.0, 5.0, 0.02),
    (0.0, 50.0, 0.25),
    (0.0, 60.0, 0.30),
    (0.0, 360.0, 0.20),
];

/// Sliding-window labels computed directly from the raw columns.
fn oracle_rows(csv: &str, window: usize, z: f64, threshold: f64) -> Vec<(String, Vec<u8>, f64, u8)> {
    let rows: Vec<Vec<String>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    let mut out = Vec::new();
    for end in window..=rows.len() {
        let win = &rows[end - window..end];
        let mut labels = Vec::new();
        let mut e = 0.0;
        for (k, (lo, hi, w)) in SPECS.iter().enumerate() {
            let xs: Vec<f64> = win.iter().map(|r| r[k + 1].parse().unwrap()).collect();
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
            let h = z * var.sqrt() / n.sqrt();
            let label = u8::from(!(mean - h >= *lo && mean + h <= *hi));
            e += *w * label as f64;
            labels.push(label);
        }
        out.push((rows[end - 1][0].clone(), labels, e, u8::from(e >= threshold)));
    }
    out
}

#[test]
fn label_matches_windowed_oracle() {
    let o = dtf(&["label", &fx("cs2_sample.csv"), "--specs", &fx("specs.json")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&header[header.len() - 3..], ["E", "intervene", "label"]);
    let want = oracle_rows(&std::fs::read_to_string(fixtures().join("cs2_sample.csv")).unwrap(), 30, 1.96, 0.6);
    let got: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    assert_eq!(got.len(), want.len());
    for (g, (idx, labels, e, intervene)) in got.iter().zip(&want) {
        assert_eq!(&g[0], idx);
        let gl: Vec<u8> = g[8..15].iter().map(|v| v.parse().unwrap()).collect();
        assert_eq!(&gl, labels, "row {idx}");
        let ge: f64 = g[15].parse().unwrap();
        assert!((ge - e).abs() < 1e-9, "row {idx}: {ge} vs {e}");
        assert_eq!(g[16].parse::<u8>().unwrap(), *intervene);
    }
    assert!(want.iter().any(|r| (r.2 - 0.22).abs() < 1e-9));
}

#[test]
fn label_policy_flag_changes_intervene() {
    let o = dtf(&["label", &fx("cs2_sample.csv"), "--specs", &fx("specs.json"), "--policy", "conservative"]);
    assert!(o.status.success());
    let flagged = stdout(&o).lines().skip(1).filter(|l| l.split(',').nth(16) == Some("1")).count();
    assert!(flagged > 0);
    let o = dtf(&["label", &fx("cs2_sample.csv"), "--specs", &fx("specs.json"), "--policy", "moderate"]);
    let flagged = stdout(&o).lines().skip(1).filter(|l| l.split(',').nth(16) == Some("1")).count();
    assert_eq!(flagged, 0);
}

#[test]
fn label_empty_input_is_ok() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let o = dtf(&["label", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).trim().is_empty());
}

#[test]
fn bad_input_exit_codes() {
    let bad_weights = dtf(&["label", &fx("cs2_sample.csv"), "--specs", &fx("specs_bad_weights.json")]);
    assert_eq!(bad_weights.status.code(), Some(2));
    let missing = dtf(&["label", "/nonexistent/rows.csv"]);
    assert_ne!(missing.status.code(), Some(0));
    let no_target = dtf(&["train", &fx("cs2_sample.csv"), "--target", "broken", "--k", "2"]);
    assert_eq!(no_target.status.code(), Some(2));
    let unknown_flag = dtf(&["label", "--frobnicate"]);
    assert_eq!(unknown_flag.status.code(), Some(2));
    let query = dtf(&["infer", "--facts", &fx("cs1_worked_facts.jsonl"), "--query", "no_such_query"]);
    assert_eq!(query.status.code(), Some(2));
}

#[test]
fn train_is_reproducible_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let src = std::fs::read_to_string(fixtures().join("separable_2000x5.csv")).unwrap();
    let small: String = src.lines().take(241).map(|l| format!("{l}\n")).collect();
    let csv = dir.path().join("small.csv");
    std::fs::write(&csv, small).unwrap();
    let run = |out: &str| {
        let path = dir.path().join(out);
        let o = dtf(&[
            "train",
            csv.to_str().unwrap(),
            "--k",
            "3",
            "--seed",
            "7",
            "--output",
            path.to_str().unwrap(),
            "--json",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let report: Value = serde_json::from_slice(&o.stdout).unwrap();
        (std::fs::read(path).unwrap(), report)
    };
    let (a, ra) = run("a.model.json");
    let (b, rb) = run("b.model.json");
    assert_eq!(a, b);
    let timeless = |r: &Value| {
        let mut rows = r["comparison"].clone();
        for row in rows.as_array_mut().unwrap() {
            row.as_object_mut().unwrap().remove("train_time_s");
        }
        rows
    };
    assert_eq!(timeless(&ra), timeless(&rb));
    let rows = ra["comparison"].as_array().unwrap();
    assert!(rows.len() >= 2);
}

#[test]
fn infer_worked_facts() {
    let o = dtf(&["infer", "--facts", &fx("cs1_worked_facts.jsonl")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let codes: BTreeSet<i64> = v["alerts"].as_array().unwrap().iter().map(|a| a["code"].as_i64().unwrap()).collect();
    assert_eq!(codes, BTreeSet::from([100, 200]));
    assert!(v["alerts"].as_array().unwrap().iter().all(|a| a["subject"] == "failure-0"));

    let rules = [fx("rules/smartmaintenance.json"), fx("rules/sensorequipment.json")];
    let o = dtf(&["infer", "--rules", &rules[0], "--rules", &rules[1], "--facts", &fx("cs1_worked_facts.jsonl")]);
    let w: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(w["alerts"], v["alerts"]);
}

#[test]
fn replay_to_stdout_emits_every_reading() {
    let o = dtf(&["replay", &fx("e2e/furnace_7sensor.csv")]);
    assert!(o.status.success());
    let lines: Vec<Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 80 * 7);
    assert_eq!(lines[0]["machine_id"], "F1");
    assert_eq!(lines[0]["sensor_id"], "S1");
    assert!(lines.windows(2).all(|w| w[0]["timestamp"].as_i64() <= w[1]["timestamp"].as_i64()));
}
