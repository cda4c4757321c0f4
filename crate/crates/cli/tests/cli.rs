use serde_json::Value;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

const BIN: &str = env!("CARGO_BIN_EXE_instructdrive");

fn cmd(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// One 50-scenario suite shared by the tests.
fn suite() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let o = cmd(&["gen", "--out", dir.path().to_str().unwrap(), "--count", "50", "--seed", "9"]);
        assert!(o.status.success(), "{}", stderr(&o));
        dir
    })
    .path()
}

fn manifest_ids() -> Vec<String> {
    let m: Value = serde_json::from_str(&std::fs::read_to_string(suite().join("manifest.json")).unwrap()).unwrap();
    m["scenarios"].as_array().unwrap().iter().map(|e| e["id"].as_str().unwrap().to_string()).collect()
}

fn scenario_file(category: &str) -> PathBuf {
    let m: Value = serde_json::from_str(&std::fs::read_to_string(suite().join("manifest.json")).unwrap()).unwrap();
    let e = m["scenarios"].as_array().unwrap().iter().find(|e| e["category"] == category).unwrap();
    suite().join(e["file"].as_str().unwrap())
}

fn hash_of(out: &str) -> String {
    out.split("hash: ").nth(1).unwrap().trim().to_string()
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(cmd(&[]).status.code(), Some(1));
    assert_eq!(cmd(&["drive"]).status.code(), Some(1));
    assert_eq!(cmd(&["run", "--agent", "human", "--scenario", "x.json"]).status.code(), Some(1));
    assert_eq!(cmd(&["gen", "--out", "/tmp/never", "--count", "10"]).status.code(), Some(1));
    let s = scenario_file("speed");
    let o = cmd(&["run", "--agent", "idm", "--scenario", s.to_str().unwrap(), "--weights", "0.5,0.5,0.5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("usage:"));
    assert_eq!(cmd(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_failures_exit_2() {
    let o = cmd(&["bench", "--suite", "/nonexistent/suite", "--agent", "idm"]);
    assert_eq!(o.status.code(), Some(2));
    let o = cmd(&["run", "--agent", "idm", "--scenario", "/nonexistent.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gen_writes_manifest_and_files() {
    let ids = manifest_ids();
    assert_eq!(ids.len(), 50);
    for id in ids {
        assert!(suite().join(format!("{id}.json")).exists());
    }
}

#[test]
fn bench_idm_writes_a_consistent_report() {
    let out = tempfile::tempdir().unwrap();
    let o = cmd(&[
        "bench", "--suite", suite().to_str().unwrap(), "--agent", "idm", "--out", out.path().to_str().unwrap(),
        "--t-limit", "30", "--workers", "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.path().join("report.json")).unwrap()).unwrap();
    let n = report["n_total"].as_u64().unwrap();
    assert_eq!(n, 50);
    assert_eq!(report["n_collisions"], 0);
    assert_eq!(report["alpha"].as_f64().unwrap(), report["n_success"].as_u64().unwrap() as f64 / n as f64);
    assert_eq!(report["beta"].as_f64().unwrap(), 0.0);
    let text = std::fs::read_to_string(out.path().join("report.txt")).unwrap();
    assert!(text.contains("as_written") && text.contains("corrected"), "{text}");
    assert_eq!(std::fs::read_to_string(out.path().join("results.jsonl")).unwrap().lines().count(), 50);
    assert_eq!(std::fs::read_dir(out.path().join("logs")).unwrap().count(), 100);
}

#[test]
fn run_then_replay_gives_the_same_hash() {
    let out = tempfile::tempdir().unwrap();
    let dir = out.path().to_str().unwrap();
    let s = scenario_file("lane_change");
    let o = cmd(&["run", "--agent", "scripted", "--scenario", s.to_str().unwrap(), "--out", dir, "--t-limit", "20"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let first = hash_of(&stdout(&o));
    let log = std::fs::read_dir(out.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.to_string_lossy().ends_with(".log.jsonl"))
        .unwrap();
    let replay_out = out.path().join("replay");
    let agent = format!("replay:{}", log.display());
    // scenario resolved from the log through the suite
    let o = cmd(&[
        "run", "--agent", &agent, "--suite", suite().to_str().unwrap(), "--out", replay_out.to_str().unwrap(),
        "--t-limit", "20",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(hash_of(&stdout(&o)), first);

    let o = cmd(&["run", "--agent", &agent, "--scenario", s.to_str().unwrap(), "--seed", "123", "--t-limit", "20", "--out", dir]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("diverges"), "{}", stderr(&o));
}

#[test]
fn eval_is_pure_and_checks_the_scenario() {
    let out = tempfile::tempdir().unwrap();
    let dir = out.path().to_str().unwrap();
    let s = scenario_file("speed");
    let o = cmd(&["run", "--agent", "mobil", "--scenario", s.to_str().unwrap(), "--out", dir, "--t-limit", "20"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = std::fs::read_dir(out.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.to_string_lossy().ends_with(".log.jsonl"))
        .unwrap();
    let args = ["eval", "--log", log.to_str().unwrap(), "--scenario", s.to_str().unwrap(), "--t-limit", "20"];
    let a = cmd(&args);
    let b = cmd(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(stdout(&a), stdout(&b));
    let rescored: Value = serde_json::from_str(&stdout(&a)).unwrap();
    let stored_file = std::fs::read_dir(out.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.to_string_lossy().ends_with(".result.json"))
        .unwrap();
    let stored: Value = serde_json::from_str(&std::fs::read_to_string(stored_file).unwrap()).unwrap();
    assert_eq!(rescored, stored);

    let other = scenario_file("distance");
    let o = cmd(&["eval", "--log", log.to_str().unwrap(), "--scenario", other.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn extern_agent_over_stdio() {
    let out = tempfile::tempdir().unwrap();
    let s = scenario_file("speed");
    let agent = format!("extern:{BIN} agent");
    let o = cmd(&["run", "--agent", &agent, "--scenario", s.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("completed=true"), "{}", stdout(&o));
    let log = std::fs::read_dir(out.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.to_string_lossy().ends_with(".log.jsonl"))
        .unwrap();
    let text = std::fs::read_to_string(log).unwrap();
    assert!(text.contains("set_target_speed"));
    assert!(!text.contains("fallback"));
}

#[test]
fn serve_hosts_a_line_protocol_episode() {
    let out = tempfile::tempdir().unwrap();
    let s = scenario_file("speed");
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let server = Command::new(BIN)
        .args([
            "serve", "--scenario", s.to_str().unwrap(), "--port", &port.to_string(), "--out",
            out.path().to_str().unwrap(), "--max-connections", "1", "--t-limit", "3",
        ])
        .env("LAMPILOT_LOG_LEVEL", "info")
        .stdout(std::process::Stdio::piped())
        .stderr(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let stream = (0..100)
        .find_map(|_| {
            std::thread::sleep(std::time::Duration::from_millis(50));
            TcpStream::connect(("127.0.0.1", port)).ok()
        })
        .expect("server came up");
    let mut w = stream.try_clone().unwrap();
    let mut lines = BufReader::new(stream).lines();
    let first: Value = serde_json::from_str(&lines.next().unwrap().unwrap()).unwrap();
    assert_eq!(first["type"], "hello");
    writeln!(w, r#"{{"type":"finish"}}"#).unwrap();
    let last: Value = lines.map(|l| serde_json::from_str(&l.unwrap()).unwrap()).last().unwrap();
    assert_eq!(last["type"], "episode_end");
    let o = server.wait_with_output().unwrap();
    assert!(o.status.success());
    assert!(stderr(&o).contains("ended"), "log level from the environment: {}", stderr(&o));
    let files: Vec<_> = std::fs::read_dir(out.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert!(files.iter().any(|f| f.to_string_lossy().ends_with(".result.json")), "{files:?}");
}
