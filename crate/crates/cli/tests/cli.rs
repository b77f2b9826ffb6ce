use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn faultbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_faultbench")).args(args).output().unwrap()
}

#[test]
fn run_writes_artifacts_and_replays() {
    let out = tempfile::tempdir().unwrap();
    let dir = out.path().to_str().unwrap();
    let path = scenario("social-network-port.yaml");
    let o = faultbench(&["run", path.to_str().unwrap(), "--agent", "baseline", "--seed", "7", "--out", dir]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("success"));
    let report = fs::read_to_string(out.path().join("report.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(v["success"], true);

    let transcript = out.path().join("transcript.jsonl");
    let r = faultbench(&["replay", path.to_str().unwrap(), transcript.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(0));
    assert_eq!(String::from_utf8(r.stdout).unwrap(), report);
}

#[test]
fn exit_codes() {
    let out = tempfile::tempdir().unwrap();
    let dir = out.path().to_str().unwrap();

    let missing = faultbench(&["run", "no/such/scenario.yaml", "--out", dir]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("no/such/scenario.yaml"));

    assert_eq!(faultbench(&["run"]).status.code(), Some(2));
    let path = scenario("social-network-port.yaml");
    let bad_agent = faultbench(&["run", path.to_str().unwrap(), "--agent", "gpt", "--out", dir]);
    assert_eq!(bad_agent.status.code(), Some(2));

    // a zero budget abandons the session: a task failure, not a usage error
    let starved = faultbench(&["run", path.to_str().unwrap(), "--budget", "0", "--out", dir]);
    assert_eq!(starved.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&starved.stdout).contains("abandoned"));
    assert_eq!(fs::read_to_string(out.path().join("transcript.jsonl")).unwrap().lines().count(), 1);
}

#[test]
fn cache_and_list() {
    let cache = tempfile::tempdir().unwrap();
    let dir = cache.path().to_str().unwrap();
    let path = scenario("social-network-port.yaml");
    let o = faultbench(&["cache", path.to_str().unwrap(), "--cache", dir, "--count", "3", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let mut ids: Vec<String> = String::from_utf8(o.stdout).unwrap().lines().map(str::to_string).collect();
    ids.sort();
    assert_eq!(ids.len(), 3);

    let listed = faultbench(&["list", "--cache", dir]);
    let listed: Vec<String> = String::from_utf8(listed.stdout)
        .unwrap()
        .lines()
        .map(|l| l.split('\t').next().unwrap().to_string())
        .collect();
    assert_eq!(listed, ids);

    let empty = tempfile::tempdir().unwrap();
    let o = faultbench(&["list", "--cache", empty.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
}
