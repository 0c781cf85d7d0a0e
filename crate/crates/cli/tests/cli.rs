use std::path::Path;
use std::process::{Command, Output};

const SCENARIO: &str = r#"
horizon_ms = 15000
policy = "prefix:sp-p"
[workload]
kind = "conversation"
think_ms = 100
[[regions]]
name = "us"
replicas = 2
clients = 5
[[regions]]
name = "eu"
replicas = 1
clients = 2
"#;

fn regionlb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regionlb"))
        .args(args)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn invalid_config_exits_2_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(
        dir.path(),
        "bad.toml",
        &SCENARIO.replace("replicas = 2", "replicas = -1"),
    );
    let out = regionlb(&["run", &bad, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("regions[0].replicas"), "{err}");

    let ok = write(dir.path(), "ok.toml", SCENARIO);
    let out = regionlb(&["run", &ok, "--set", "replica.kv_budget_tokens=0", "--out", "unused"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("replica.kv_budget_tokens"));
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "s.toml", SCENARIO);
    let read = |sub: &str| {
        let out = regionlb(&[
            "run",
            &sc,
            "--seed",
            "1",
            "--out",
            dir.path().join(sub).to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let base = dir.path().join(sub).join("base");
        ["log.jsonl", "summary.json", "summary.csv"].map(|f| std::fs::read(base.join(f)).unwrap())
    };
    let a = read("a");
    assert!(!a[0].is_empty());
    assert_eq!(a, read("b"));
}

#[test]
fn sweep_prints_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "s.toml", SCENARIO);
    let out = regionlb(&["sweep", &sc, "--grid", "seed=1,2;policy=ll:bp,prefix:sp-p"]);
    assert!(out.status.success());
    let csv = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("seed,policy,"));
    assert!(lines[4].starts_with("2,prefix:sp-p,"));

    let out = regionlb(&["sweep", &sc, "--grid", ""]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 1);
}

#[test]
fn analyze_reads_back_a_log() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "s.toml", SCENARIO);
    let o = dir.path().join("o");
    assert!(regionlb(&["run", &sc, "--out", o.to_str().unwrap()]).status.success());
    let log = o.join("base/log.jsonl");
    let cost = write(dir.path(), "cost.toml", "replica_capacity = 1.0\nslot_ms = 1000\n");
    let out = regionlb(&["analyze", log.to_str().unwrap(), "--cost-model", &cost]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let stored: serde_json::Value =
        serde_json::from_slice(&std::fs::read(o.join("base/summary.json")).unwrap()).unwrap();
    assert_eq!(v["summary"], stored);
    assert_eq!(v["provisioning"].as_array().unwrap().len(), 3);

    let broken = write(
        dir.path(),
        "broken.jsonl",
        "{\"ts\":0,\"event\":\"end\",\"in_flight\":0}\n",
    );
    assert_eq!(regionlb(&["analyze", &broken]).status.code(), Some(2));
}
