use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fair-screen"));
    c.env_remove("FAIR_SCREEN_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write(dir: &TempDir, name: &str, v: &Value) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn nonconvex_spec() -> Value {
    json!({"groups": [
        {"id": "A", "q": 0.25, "u": 0.25, "stages": [{"tau1": 0.75, "tau0": 0.0}, {"tau1": 0.5, "tau0": 0.5}]},
        {"id": "B", "q": 0.25, "u": 0.25, "stages": [{"tau1": 0.5, "tau0": 0.5}, {"tau1": 0.75, "tau0": 0.0}]}
    ]})
}

fn or_suboptimal_spec() -> Value {
    json!({"groups": [
        {"id": "A", "weight": 0.5, "base_rate": 0.5, "stages": [{"tau1": 0.75, "tau0": 0.0}, {"tau1": 0.5, "tau0": 0.25}]},
        {"id": "B", "weight": 0.5, "base_rate": 0.5, "stages": [{"tau1": 0.5, "tau0": 0.25}, {"tau1": 0.75, "tau0": 0.0}]}
    ]})
}

fn stage(pi1: f64, pi0: f64) -> Value {
    json!({"pi1": pi1, "pi0": pi0})
}

fn rate(v: &Value, id: &str, key: &str) -> f64 {
    v["evaluation"]["groups"]
        .as_array()
        .unwrap()
        .iter()
        .find(|g| g["id"] == id)
        .unwrap()[key]
        .as_f64()
        .unwrap()
}

#[test]
fn evaluate_averaged_nonconvex_policy() {
    let dir = TempDir::new().unwrap();
    let spec = write(&dir, "spec.json", &nonconvex_spec());
    let avg = json!({"groups": [
        {"id": "A", "stages": [stage(1.0, 0.0), stage(1.0, 1.0)]},
        {"id": "B", "stages": [stage(1.0, 0.75), stage(1.0, 0.5)]}
    ]});
    let pol = write(&dir, "avg.json", &avg);
    let o = run(&["evaluate", s(&spec), s(&pol), "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let v = stdout_json(&o);
    assert!((rate(&v, "A", "tpr") - 0.75).abs() < 1e-12);
    assert!((rate(&v, "B", "tpr") - 49.0 / 64.0).abs() < 1e-12);

    let out = run(&["verify", s(&spec), s(&pol)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn evaluate_bypass_has_full_recall() {
    let dir = TempDir::new().unwrap();
    let spec = write(&dir, "spec.json", &nonconvex_spec());
    let by = json!({"groups": [
        {"id": "A", "stages": [stage(1.0, 1.0), stage(1.0, 1.0)]},
        {"id": "B", "stages": [stage(1.0, 1.0), stage(1.0, 1.0)]}
    ]});
    let pol = write(&dir, "bypass.json", &by);
    let o = run(&["evaluate", s(&spec), s(&pol), "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let v = stdout_json(&o);
    assert_eq!(v["evaluation"]["recall"].as_f64(), Some(1.0));
    assert!((v["evaluation"]["precision"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(run(&["verify", s(&spec), s(&pol), "--criterion", "eodds"]).status.code(), Some(0));
}

#[test]
fn malformed_input_names_the_field() {
    let dir = TempDir::new().unwrap();
    let mut bad = nonconvex_spec();
    bad["groups"][1]["stages"][0]["tau1"] = json!("high");
    let spec = write(&dir, "bad.json", &bad);
    let o = run(&["bounds", s(&spec)]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("groups[1].stages[0].tau1"), "{err}");

    let mut extra = nonconvex_spec();
    extra["groups"][0]["colour"] = json!(1);
    let spec = write(&dir, "extra.json", &extra);
    assert_eq!(run(&["bounds", s(&spec)]).status.code(), Some(2));

    let mut mixed = nonconvex_spec();
    mixed["groups"][0] = json!({"id": "A", "weight": 0.5, "base_rate": 0.5, "stages": [{"tau1": 0.75, "tau0": 0.0}, {"tau1": 0.5, "tau0": 0.5}]});
    let spec = write(&dir, "mixed.json", &mixed);
    assert_eq!(run(&["bounds", s(&spec)]).status.code(), Some(2));

    let missing = dir.path().join("absent.json");
    assert_eq!(run(&["bounds", s(&missing)]).status.code(), Some(2));
}

#[test]
fn solve_methods_on_worked_example() {
    let dir = TempDir::new().unwrap();
    let spec = write(&dir, "spec.json", &or_suboptimal_spec());
    let o = run(&["solve", s(&spec), "--method", "exact", "--alpha", "0.5", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let exact = stdout_json(&o);
    assert!((exact["score"].as_f64().unwrap() - 0.875).abs() < 1e-9);
    assert_eq!(exact["method"], "exact");
    assert_eq!(exact["fairness"].as_array().unwrap().len(), 4);

    let o = run(&["solve", s(&spec), "--method", "ratio", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let ratio = stdout_json(&o);
    let b = stdout_json(&run(&["bounds", s(&spec), "--format", "json"]));
    let mp = b["max_precision"].as_f64().unwrap();
    assert!((ratio["evaluation"]["precision"].as_f64().unwrap() - mp).abs() < 1e-12);
    assert!(b["eodds_precision_bound"].as_f64().unwrap() <= mp + 1e-12);

    let o = run(&["solve", s(&spec), "--method", "fptas", "--eps", "0.05", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let f = stdout_json(&o)["score"].as_f64().unwrap();
    assert!(f >= 0.95 * 0.875 - 1e-12);

    let o = run(&["solve", s(&spec), "--method", "exact"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("0.875000"));
}

#[test]
fn report_round_trips_through_evaluate() {
    let dir = TempDir::new().unwrap();
    let spec = write(&dir, "spec.json", &or_suboptimal_spec());
    for method in ["exact", "two-approx", "oracle"] {
        let o = run(&["solve", s(&spec), "--method", method, "--format", "json"]);
        assert_eq!(o.status.code(), Some(0), "{method}");
        let report = stdout_json(&o);
        let path = dir.path().join(format!("{method}.json"));
        std::fs::write(&path, &o.stdout).unwrap();
        let e = stdout_json(&run(&["evaluate", s(&spec), s(&path), "--format", "json"]));
        for id in ["A", "B"] {
            for key in ["tpr", "fpr"] {
                assert!((rate(&e, id, key) - rate(&report, id, key)).abs() < 1e-9);
            }
        }
        let r0 = report["evaluation"]["recall"].as_f64().unwrap();
        assert!((e["evaluation"]["recall"].as_f64().unwrap() - r0).abs() < 1e-9);
    }
}

#[test]
fn size_limit_exits_three() {
    let dir = TempDir::new().unwrap();
    let st = json!([{"tau1": 0.9, "tau0": 0.2}, {"tau1": 0.9, "tau0": 0.2}, {"tau1": 0.9, "tau0": 0.2}]);
    let groups: Vec<Value> = (0..4)
        .map(|x| json!({"id": format!("X{x}"), "q": 0.125, "u": 0.125, "stages": st}))
        .collect();
    let spec = write(&dir, "big.json", &json!({ "groups": groups }));
    let o = run(&["solve", s(&spec), "--method", "groupblind", "--eps", "0.05"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn incompatible_flags_are_usage_errors() {
    let dir = TempDir::new().unwrap();
    let spec = write(&dir, "spec.json", &or_suboptimal_spec());
    for args in [
        vec!["--method", "ratio", "--objective", "linear"],
        vec!["--method", "exact", "--eps", "0.1"],
        vec!["--method", "two-approx", "--objective", "reciprocal"],
        vec!["--method", "exact", "--objective", "precision", "--alpha", "0.3"],
        vec!["--method", "exact", "--alpha", "1.5"],
        vec!["--method", "nope"],
    ] {
        let mut full = vec!["solve", s(&spec)];
        full.extend(args.iter().copied());
        assert_eq!(run(&full).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn repro_exit_codes() {
    assert_eq!(run(&["repro", "no-such-example"]).status.code(), Some(2));
    let o = run(&["repro"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.lines().count() > 10 && !text.contains("FAIL"));
    let v = stdout_json(&run(&["repro", "nonconvex", "--format", "json"]));
    assert_eq!(v.as_array().unwrap().len(), 1);
}

#[test]
fn thread_count_from_environment() {
    let dir = TempDir::new().unwrap();
    let spec = write(&dir, "spec.json", &or_suboptimal_spec());
    let one = bin()
        .env("FAIR_SCREEN_THREADS", "1")
        .args(["solve", s(&spec), "--method", "exact", "--format", "json"])
        .output()
        .unwrap();
    assert_eq!(one.status.code(), Some(0));
    let many = run(&["--threads", "4", "solve", s(&spec), "--method", "exact", "--format", "json"]);
    assert_eq!(stdout_json(&one)["policy"], stdout_json(&many)["policy"]);
    let bad = bin().env("FAIR_SCREEN_THREADS", "lots").args(["repro"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
