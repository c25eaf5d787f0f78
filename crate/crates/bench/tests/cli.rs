use std::fs;
use std::process::Command;

use smc_core::analysis::load_results;

fn smcbench() -> Command {
    Command::new(env!("CARGO_BIN_EXE_smcbench"))
}

#[test]
fn sweep_writes_csv_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sweep.json");
    fs::write(&config, r#"{"peers": [3, 5, 7], "latency_ms": [16], "rate_mbit": [1000], "loss": [0], "sessions": 20, "reps": 9}"#).unwrap();
    let out = dir.path().join("results.csv");
    let report = dir.path().join("report.json");
    let status = smcbench()
        .arg("--config")
        .arg(&config)
        .args(["--reps", "2", "--seed", "4"])
        .arg("--out")
        .arg(&out)
        .arg("--report")
        .arg(&report)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let rows = load_results(&out).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.sessions == 20 && r.failures == 0));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let fits = json["fits"].as_array().unwrap();
    let peers = fits
        .iter()
        .find(|f| f["axis"] == "peers" && f["metric"] == "duration_per_session_ms")
        .unwrap();
    assert!(peers["fit"]["slope"].as_f64().unwrap() > 0.0);
    let ttp: Vec<f64> = json["baselines"].as_array().unwrap().iter().map(|b| b["ttp_ms_per_session"].as_f64().unwrap()).collect();
    assert!(ttp.windows(2).all(|w| w[0] == w[1]));
    assert!(String::from_utf8_lossy(&status.stdout).contains("reference lines"));
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    for args in [
        vec!["--peers", "2"],
        vec!["--mode", "cluster"],
        vec!["--loss", "1.5"],
        vec!["--mode", "sockets", "--latency-ms", "16"],
        vec!["--pf", "50", "--sessions", "10"],
    ] {
        let status = smcbench().args(&args).arg("--out").arg(&out).status().unwrap();
        assert_eq!(status.code(), Some(2), "{args:?}");
    }
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"peer": [3]}"#).unwrap();
    let status = smcbench().arg("--config").arg(&bad).arg("--out").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn resumed_sweep_appends_remaining_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let state = dir.path().join("state.json");
    let args = ["--peers", "3", "--latency-ms", "0", "--rate-mbit", "100", "--loss", "0", "--sessions", "10", "--reps", "3"];
    let run = || smcbench().args(args).arg("--out").arg(&out).arg("--state").arg(&state).status().unwrap();
    assert!(run().success());
    let full = fs::read_to_string(&out).unwrap();

    // Pretend the sweep stopped after the first repetition.
    let mut saved: serde_json::Value = serde_json::from_str(&fs::read_to_string(&state).unwrap()).unwrap();
    saved["completed"] = 1.into();
    fs::write(&state, saved.to_string()).unwrap();
    let first: Vec<&str> = full.lines().take(2).collect();
    fs::write(&out, first.join("\n") + "\n").unwrap();
    assert!(run().success());
    assert_eq!(fs::read_to_string(&out).unwrap(), full);
}

#[test]
fn analyze_only_reads_existing_results() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let status = smcbench().arg("--analyze-only").arg("--out").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(2));
    assert!(smcbench()
        .args(["--peers", "3", "--latency-ms", "0,50", "--rate-mbit", "1000", "--loss", "0", "--sessions", "5", "--reps", "1"])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let report = smcbench().arg("--analyze-only").arg("--out").arg(&out).output().unwrap();
    assert!(report.status.success());
    assert!(String::from_utf8_lossy(&report.stdout).contains("latency_ms"));
}
