use prm_core::judge::mock::MockJudgeServer;
use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn prm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prm"))
        .args(args)
        .env_remove("PRM_JUDGE_ENDPOINT")
        .output()
        .expect("spawn prm")
}

fn envs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/envs")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn error_line(out: &Output) -> Value {
    let err = String::from_utf8_lossy(&out.stderr);
    let last = err.lines().last().expect("stderr has an error line");
    serde_json::from_str(last).expect("error line is JSON")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn collect(dir: &Path, seed: &str) -> PathBuf {
    let ds = dir.join("ds");
    let envs = envs_dir();
    let out = prm(&[
        "collect", "--envs", s(&envs), "--iterations", "40", "--rollouts", "4", "--seed", seed, "--out", s(&ds),
    ]);
    assert_ok(&out);
    ds
}

#[test]
fn collect_records_seed_in_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let ds = collect(dir.path(), "7");
    let m = read_json(&ds.join("run_manifest.json"));
    assert_eq!(m["seed"], 7);
    assert_eq!(m["command"], "collect");
    assert_eq!(m["config"]["budget"]["iterations"], 40);
    assert_eq!(m["inputs"].as_object().unwrap().len(), 1);
    assert!(ds.join("trajectories.jsonl").exists());
}

#[test]
fn pipeline_runs_and_eval_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let ds = collect(p, "3");
    let pairs = p.join("pairs.jsonl");
    assert_ok(&prm(&["pairs", "--dataset", s(&ds), "--seed", "3", "--out", s(&pairs)]));
    assert!(p.join("pairs.run.json").exists());

    let model = p.join("model.json");
    assert_ok(&prm(&[
        "train", "--pairs", s(&pairs), "--dataset", s(&ds), "--epochs", "5", "--out", s(&model),
    ]));
    let m = read_json(&model);
    assert_eq!(m["manifest"]["command"], "train");

    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let out = p.join(format!("eval_{run}"));
        assert_ok(&prm(&[
            "eval", "--pairs", s(&pairs), "--model", s(&model), "--scorer", "trained", "--out", s(&out),
        ]));
        reports.push((
            std::fs::read(out.join("report.md")).unwrap(),
            std::fs::read(out.join("report.csv")).unwrap(),
        ));
    }
    assert_eq!(reports[0], reports[1]);

    let corr = p.join("corr.csv");
    assert_ok(&prm(&["correlate", "--dataset", s(&ds), "--out", s(&corr)]));
    let csv = std::fs::read_to_string(&corr).unwrap();
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn guide_writes_scaling_and_ablation_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("guide");
    let envs = envs_dir();
    assert_ok(&prm(&[
        "guide", "--envs", s(&envs), "--n", "1,2", "--mask", "H,full", "--episodes", "5", "--out", s(&out),
    ]));
    let scaling = std::fs::read_to_string(out.join("scaling.csv")).unwrap();
    let lines: Vec<&str> = scaling.lines().collect();
    assert_eq!(lines[0], "n,successes,episodes,rate,ci_low,ci_high");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,") && lines[2].starts_with("2,"));
    let ablation = std::fs::read_to_string(out.join("ablation_n2.csv")).unwrap();
    assert_eq!(ablation.lines().count(), 3);
    assert!(out.join("ablation_n1.csv").exists());
}

#[test]
fn missing_dataset_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = prm(&[
        "pairs",
        "--dataset",
        s(&dir.path().join("missing")),
        "--out",
        s(&dir.path().join("p.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_line(&out)["error"], "missing_input");
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"search": {"iterations": 10, "depth": 3}}"#).unwrap();
    let envs = envs_dir();
    let out = prm(&[
        "--config",
        s(&cfg),
        "collect",
        "--envs",
        s(&envs),
        "--out",
        s(&dir.path().join("ds")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let e = error_line(&out);
    assert_eq!(e["code"], 2);
    assert!(e["message"].as_str().unwrap().contains("depth"));
}

#[test]
fn trained_scorer_without_model_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let ds = collect(dir.path(), "1");
    let pairs = dir.path().join("pairs.jsonl");
    assert_ok(&prm(&["pairs", "--dataset", s(&ds), "--out", s(&pairs)]));
    let out = prm(&["eval", "--pairs", s(&pairs), "--scorer", "trained", "--out", s(&dir.path().join("e"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn remote_judge_without_endpoint_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let envs = envs_dir();
    let out = prm(&[
        "collect", "--envs", s(&envs), "--judge", "remote", "--out", s(&dir.path().join("ds")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

fn judge_config(dir: &Path, endpoint: &str) -> PathBuf {
    let cfg = dir.join("judge.json");
    let body = serde_json::json!({
        "search": {"iterations": 8, "rollouts": 2},
        "judge": {"endpoint": endpoint, "max_attempts": 2, "backoff_ms": [1], "timeout_ms": 500}
    });
    std::fs::write(&cfg, body.to_string()).unwrap();
    cfg
}

#[test]
fn unreachable_remote_judge_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = judge_config(dir.path(), &MockJudgeServer::unused_url());
    let envs = envs_dir();
    let out = prm(&[
        "--config", s(&cfg), "collect", "--envs", s(&envs), "--judge", "remote", "--out", s(&dir.path().join("ds")),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(error_line(&out)["error"], "judge");
}

#[test]
fn remote_judge_through_mock_server() {
    let server = MockJudgeServer::fixed("1 looks fine").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = judge_config(dir.path(), &server.url());
    let envs = envs_dir();
    let ds = dir.path().join("ds");
    let out = prm(&["--config", s(&cfg), "collect", "--envs", s(&envs), "--judge", "remote", "--out", s(&ds)]);
    assert_ok(&out);
    assert!(!server.requests().is_empty());
    let m = read_json(&ds.join("run_manifest.json"));
    assert_eq!(m["config"]["judge"], "remote");
}
