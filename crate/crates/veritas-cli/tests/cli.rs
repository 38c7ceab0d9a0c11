//! End-to-end command-line tests driven through the built binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn veritas(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_veritas"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = veritas(dir, args);
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(dir: &Path, args: &[&str]) -> String {
    let out = veritas(dir, args);
    assert!(
        !out.status.success(),
        "command {:?} unexpectedly succeeded",
        args
    );
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "gen-traces",
            "--kind",
            "markov",
            "--lo",
            "3",
            "--hi",
            "8",
            "--n",
            "1",
            "--seed",
            "9",
            "--out",
            "traces",
            "--windows",
            "60",
        ],
    );
    ok(
        dir.path(),
        &[
            "emulate",
            "--trace",
            "traces/trace_000.csv",
            "--out-log",
            "session.jsonl",
            "--out-metrics",
            "metrics.json",
            "--seed",
            "5",
            "--chunks",
            "50",
        ],
    );
    dir
}

#[test]
fn gen_traces_is_deterministic_and_requires_seed() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "gen-traces",
        "--kind",
        "square",
        "--lo",
        "2",
        "--hi",
        "8",
        "--n",
        "3",
        "--seed",
        "1",
        "--out",
        "a",
        "--windows",
        "24",
        "--period",
        "4",
    ];
    ok(dir.path(), &args);
    let mut again = args;
    again[12] = "b";
    ok(dir.path(), &again);
    for i in 0..3 {
        let a = fs::read(dir.path().join(format!("a/trace_{i:03}.csv"))).unwrap();
        let b = fs::read(dir.path().join(format!("b/trace_{i:03}.csv"))).unwrap();
        assert_eq!(a, b);
    }
    let err = fails(
        dir.path(),
        &[
            "gen-traces",
            "--kind",
            "square",
            "--lo",
            "2",
            "--hi",
            "8",
            "--n",
            "1",
            "--out",
            "c",
        ],
    );
    assert!(err.contains("--seed"), "error should demand a seed: {err}");
}

#[test]
fn emulate_is_byte_stable_and_defaults_match() {
    let dir = setup();
    ok(
        dir.path(),
        &[
            "emulate",
            "--trace",
            "traces/trace_000.csv",
            "--out-log",
            "session2.jsonl",
            "--out-metrics",
            "metrics2.json",
            "--seed",
            "5",
            "--chunks",
            "50",
        ],
    );
    assert_eq!(
        fs::read(dir.path().join("session.jsonl")).unwrap(),
        fs::read(dir.path().join("session2.jsonl")).unwrap(),
        "same args must give byte-identical logs"
    );
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("metrics.json")).unwrap())
            .unwrap();
    assert_eq!(metrics["config"]["player"]["abr"]["id"], "mpc");
    assert_eq!(metrics["config"]["player"]["buffer_cap_s"], 5.0);
    assert_eq!(metrics["tool_version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn emulate_rejects_unknown_abr_with_the_known_set() {
    let dir = setup();
    let err = fails(
        dir.path(),
        &[
            "emulate",
            "--trace",
            "traces/trace_000.csv",
            "--out-log",
            "x.jsonl",
            "--abr",
            "pensieve",
        ],
    );
    for name in ["mpc", "bba", "bola"] {
        assert!(err.contains(name), "error must list {name}: {err}");
    }
}

#[test]
fn abduct_writes_map_samples_and_baseline() {
    let dir = setup();
    ok(
        dir.path(),
        &[
            "abduct",
            "--log",
            "session.jsonl",
            "--out",
            "abd",
            "--samples",
            "5",
            "--sample-seed",
            "3",
        ],
    );
    for file in [
        "abduction.json",
        "map.csv",
        "baseline.csv",
        "sample_01.csv",
        "sample_05.csv",
    ] {
        assert!(dir.path().join("abd").join(file).exists(), "missing {file}");
    }
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("abd/abduction.json")).unwrap())
            .unwrap();
    assert_eq!(meta["samples"].as_array().unwrap().len(), 5);
    assert!(meta["log_likelihood"].as_f64().unwrap().is_finite());
}

#[test]
fn abduct_rejects_logs_missing_tcp_state() {
    let dir = setup();
    let mut lines: Vec<String> = fs::read_to_string(dir.path().join("session.jsonl"))
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    // strip the tcp object from one chunk line
    let mut chunk: serde_json::Value = serde_json::from_str(&lines[3]).unwrap();
    chunk.as_object_mut().unwrap().remove("tcp");
    lines[3] = chunk.to_string();
    fs::write(dir.path().join("broken.jsonl"), lines.join("\n")).unwrap();
    let err = fails(
        dir.path(),
        &["abduct", "--log", "broken.jsonl", "--out", "x"],
    );
    assert!(
        err.contains("tcp") && err.contains("line 4"),
        "error should cite the tcp field and line: {err}"
    );
}

#[test]
fn whatif_report_shape_changes_and_byte_stability() {
    let dir = setup();
    let args = [
        "whatif",
        "--log",
        "session.jsonl",
        "--change",
        "abr=bba",
        "--change",
        "buffer=30",
        "--change",
        "ladder=0.1,0.5,1.2,2.4,4.0",
        "--with-gtbw",
        "traces/trace_000.csv",
        "--out",
        "report.json",
        "--seed",
        "5",
        "--sample-seed",
        "11",
    ];
    ok(dir.path(), &args);
    let mut again = args;
    again[12] = "report2.json";
    ok(dir.path(), &again);
    let a = fs::read(dir.path().join("report.json")).unwrap();
    let b = fs::read(dir.path().join("report2.json")).unwrap();
    assert_eq!(
        a, b,
        "what-if reports must be byte-stable under fixed seeds"
    );

    let report: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(report["setting_b"]["abr"], "bba");
    assert_eq!(report["setting_b"]["buffer_cap_s"], 30.0);
    assert_eq!(report["setting_a"]["abr"], "mpc");
    assert_eq!(report["schemes"]["veritas"].as_array().unwrap().len(), 5);
    for metric in [
        "rebuffer_ratio",
        "avg_ssim",
        "avg_bitrate_mbps",
        "ssim_change",
    ] {
        let low = report["veritas_low"][metric].as_f64().unwrap();
        let high = report["veritas_high"][metric].as_f64().unwrap();
        assert!(low <= high, "{metric}: low {low} > high {high}");
    }
    assert!(report["schemes"]["gtbw"].is_object());
}

#[test]
fn whatif_replay_identity_reproduces_original_metrics() {
    let dir = setup();
    ok(
        dir.path(),
        &[
            "whatif",
            "--log",
            "session.jsonl",
            "--with-gtbw",
            "traces/trace_000.csv",
            "--out",
            "identity.json",
            "--seed",
            "5",
            "--chunks",
            "50",
        ],
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("identity.json")).unwrap())
            .unwrap();
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("metrics.json")).unwrap())
            .unwrap();
    assert_eq!(
        report["schemes"]["gtbw"], metrics["metrics"],
        "gtbw replay must equal the original run"
    );
}

#[test]
fn predict_handles_candidates_predictors_and_empty_logs() {
    let dir = setup();
    let out = ok(
        dir.path(),
        &[
            "predict",
            "--log",
            "session.jsonl",
            "--candidates",
            "100000,2000000",
        ],
    );
    let parsed: serde_json::Value = serde_json::from_str(&out).unwrap();
    let rows = parsed["candidates"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    for row in rows {
        let d = row["d_hat_s"].as_f64().unwrap();
        let y = row["y_hat_mbps"].as_f64().unwrap();
        let s = row["size_bytes"].as_u64().unwrap();
        assert!((d - s as f64 * 8.0 / y / 1e6).abs() < 1e-6);
    }

    let out = ok(
        dir.path(),
        &[
            "predict",
            "--log",
            "session.jsonl",
            "--candidates",
            "100000",
            "--predictor",
            "associational",
        ],
    );
    let parsed: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(parsed["predictor"], "associational");

    fs::write(
        dir.path().join("empty.jsonl"),
        "{\"format\":\"veritas-log/1\",\"delay_s\":0.08,\"chunk_duration_s\":2}\n",
    )
    .unwrap();
    let err = fails(
        dir.path(),
        &["predict", "--log", "empty.jsonl", "--candidates", "1000"],
    );
    assert!(
        err.contains("empty"),
        "empty prefix must be rejected: {err}"
    );
}

#[test]
fn f_accuracy_csv_is_sorted_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out1 = ok(
        dir.path(),
        &[
            "f-accuracy",
            "--out",
            "cdf.csv",
            "--experiments",
            "8",
            "--payloads",
            "20",
            "--seed",
            "4",
        ],
    );
    ok(
        dir.path(),
        &[
            "f-accuracy",
            "--out",
            "cdf2.csv",
            "--experiments",
            "8",
            "--payloads",
            "20",
            "--seed",
            "4",
        ],
    );
    assert_eq!(
        fs::read(dir.path().join("cdf.csv")).unwrap(),
        fs::read(dir.path().join("cdf2.csv")).unwrap()
    );
    assert!(out1.contains("within_1mbps="));
    let text = fs::read_to_string(dir.path().join("cdf.csv")).unwrap();
    let mut last_cdf = 0.0;
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            assert_eq!(line, "rel_error,cdf");
            continue;
        }
        let (_, cdf) = line.split_once(',').unwrap();
        let cdf: f64 = cdf.parse().unwrap();
        assert!(cdf >= last_cdf, "cdf column must be nondecreasing");
        last_cdf = cdf;
    }
    assert!((last_cdf - 1.0).abs() < 1e-9);
}

#[test]
fn thread_cap_does_not_change_output() {
    let dir = setup();
    let args = [
        "whatif",
        "--log",
        "session.jsonl",
        "--change",
        "buffer=30",
        "--out",
        "t1.json",
        "--seed",
        "5",
        "--sample-seed",
        "11",
    ];
    ok(dir.path(), &args);
    let out = Command::new(env!("CARGO_BIN_EXE_veritas"))
        .current_dir(dir.path())
        .env("VERITAS_THREADS", "1")
        .args({
            let mut a = args;
            a[6] = "t2.json";
            a
        })
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(
        fs::read(dir.path().join("t1.json")).unwrap(),
        fs::read(dir.path().join("t2.json")).unwrap(),
        "output must not depend on the parallelism cap"
    );
}

#[test]
fn estimate_reproduces_the_capacity_limited_example() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(
        dir.path(),
        &["estimate", "--c", "8", "--size", "240000", "--cwnd", "64"],
    );
    let parsed: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(parsed["y_hat_mbps"], 8.0);
}
