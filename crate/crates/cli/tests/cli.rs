use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;
use wholebody::harness::EpisodeRecord;
use wholebody::WbcParams;

const BIN: &str = env!("CARGO_BIN_EXE_wholebody");

fn data(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core").join(rel)
}

fn cmd() -> Command {
    let mut c = Command::new(BIN);
    c.env_remove("HOMER_WBC_PARAMS");
    c
}

fn run(args: &[&str]) -> Output {
    cmd().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| {
        panic!("stdout is not JSON ({e}): {}\nstderr: {}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
    })
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_sim_records_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("out/reach.jsonl");
    let o = run(&["run-sim", "--scenario", s(&data("scenarios/reach_pose.json")), "--seed", "3", "--record", s(&rec)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert_eq!(v["success"], true);
    assert!(v["final_position_error"].as_f64().unwrap() <= 1e-3);
    assert!(dir.path().join("out/reach.annotations.json").exists());
    let record = EpisodeRecord::load(&rec).unwrap();
    assert_eq!(record.ticks.len() as u64, v["ticks"].as_u64().unwrap());
    assert_eq!(record.header.seed, 3);

    let o = run(&["replay", "--episode", s(&rec), "--strict"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert_eq!(v["max_deviation"], 0.0);
    assert!(v["first_divergent_tick"].is_null());
}

#[test]
fn run_sim_with_scripted_policy() {
    let o = run(&[
        "run-sim",
        "--scenario",
        s(&data("scenarios/pick_and_place.json")),
        "--policy",
        s(&data("policies/pick_and_place.json")),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout_json(&o)["success"], true);
}

#[test]
fn failed_episode_exits_with_runtime_code() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(data("scenarios/reach_pose.json")).unwrap();
    let mut v: Value = serde_json::from_str(&text).unwrap();
    v["max_ticks"] = 2.into();
    let path = dir.path().join("short.json");
    std::fs::write(&path, v.to_string()).unwrap();
    let o = run(&["run-sim", "--scenario", s(&path)]);
    assert_eq!(code(&o), 3);
    let out = stdout_json(&o);
    assert_eq!(out["success"], false);
    assert_eq!(out["reason"], "timeout");
}

#[test]
fn replay_detects_parameter_changes() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("r.jsonl");
    let o = run(&["run-sim", "--scenario", s(&data("scenarios/tabletop_region.json")), "--seed", "9", "--record", s(&rec)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let params = WbcParams { arm_posture_weight: 4e-3, ..WbcParams::default() };
    let pfile = dir.path().join("params.json");
    std::fs::write(&pfile, serde_json::to_string(&params).unwrap()).unwrap();

    let o = run(&["replay", "--episode", s(&rec), "--params", s(&pfile), "--strict"]);
    assert_eq!(code(&o), 2);
    let o = run(&["replay", "--episode", s(&rec), "--params", s(&pfile)]);
    assert_eq!(code(&o), 3);
    let v = stdout_json(&o);
    assert!(v["max_deviation"].as_f64().unwrap() > 0.0);
    assert_eq!(v["params_hash_match"], false);
    // The same file through the environment variable.
    let o = cmd().args(["replay", "--episode", s(&rec)]).env("HOMER_WBC_PARAMS", &pfile).output().unwrap();
    assert_eq!(code(&o), 3);
    assert_eq!(stdout_json(&o)["params_hash_match"], false);
}

#[test]
fn benchmark_writes_deterministic_summary() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = data("scenarios/reachable.json");
    let mut summaries = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(format!("{name}.json"));
        let csv = dir.path().join(format!("{name}.csv"));
        let o = run(&["benchmark", "--scenario", s(&scenario), "--trials", "6", "--seed", "11", "--out", s(&out), "--csv", s(&csv)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let doc: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(doc["summary"]["trials"], 6);
        assert_eq!(doc["trials"].as_array().unwrap().len(), 6);
        assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 7);
        summaries.push(doc);
    }
    assert_eq!(summaries[0], summaries[1]);
    let o = run(&["benchmark", "--scenario", s(&scenario), "--trials", "0", "--out", s(&dir.path().join("x.json"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn solve_ik_prints_result_and_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let qp = dir.path().join("qp.txt");
    let o = run(&[
        "solve-ik",
        "--target",
        "0.5,0.1,0.5,0,0.7071067811865476,0.7071067811865476,0",
        "--trace",
        "--dump-qp",
        s(&qp),
        "--dump-constraints",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert_eq!(v["command"].as_array().unwrap().len(), 10);
    assert!(!v["trace"].as_array().unwrap().is_empty());
    assert!(std::fs::read_to_string(&qp).unwrap().starts_with("H 10 10\n"));

    // Out-of-limit inputs are clamped and flagged rather than rejected.
    let q = "0,0,0,0,9,3.14,-2.27,0,0.96,1.57";
    let o = run(&["solve-ik", "--q", q, "--target", "-0.2,0.1,0.5,1,0,0,0"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout_json(&o)["clamped_input"], true);
}

#[test]
fn invalid_input_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"name\": 1}").unwrap();
    for args in [
        &["solve-ik", "--target", "1,2,3"][..],
        &["solve-ik", "--target", "0,0,0,1,0,0,0", "--q", "1,2"],
        &["run-sim", "--scenario", "/does/not/exist.json"],
        &["run-sim", "--scenario", s(&bad)],
        &["replay", "--episode", s(&bad)],
        &["frobnicate"],
        &["run-sim"],
    ] {
        let o = run(args);
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = cmd()
        .args(["solve-ik", "--target", "0.5,0,0.5,1,0,0,0"])
        .env("HOMER_WBC_PARAMS", &bad)
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    assert_eq!(code(&run(&["--help"])), 0);
}

fn get(port: u16, path: &str) -> Option<String> {
    let mut s = TcpStream::connect(("127.0.0.1", port)).ok()?;
    write!(s, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").ok()?;
    let mut body = String::new();
    s.read_to_string(&mut body).ok()?;
    Some(body)
}

#[test]
fn serve_answers_healthz() {
    let dir = tempfile::tempdir().unwrap();
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = cmd()
        .args(["serve", "--port", &port.to_string(), "--record-dir", s(dir.path())])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    let mut body = None;
    while Instant::now() < deadline {
        if let Some(b) = get(port, "/healthz") {
            body = Some(b);
            break;
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    child.kill().unwrap();
    child.wait().unwrap();
    let body = body.expect("service came up");
    assert!(body.starts_with("HTTP/1.1 200"), "{body}");
    assert!(body.contains(&WbcParams::default().hash()));
}
