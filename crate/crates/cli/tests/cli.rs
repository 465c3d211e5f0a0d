use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn gpt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpt")).args(args).output().expect("run gpt")
}

fn json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn homophily_reports_global_ratio_and_histograms() {
    let v = json(&gpt(&["homophily", arg(&fixture("tiny")), "--hop", "2"]));
    assert_eq!(v["global"], 0.0);
    assert_eq!(v["hops"].as_array().unwrap().len(), 2);
    assert_eq!(v["hops"][0]["defined_nodes"], 3);
}

#[test]
fn synth_rewires_to_target() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rewired");
    let v = json(&gpt(&["synth", arg(&fixture("homophilous")), "--target-h", "0.3", "--seed", "1", "--out", arg(&out)]));
    assert!((v["achieved_h"].as_f64().unwrap() - 0.3).abs() <= 0.02);
    let again = json(&gpt(&["homophily", arg(&out)]));
    assert_eq!(again["global"], v["achieved_h"]);
}

#[test]
fn unreachable_target_exits_with_infeasible_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = gpt(&["synth", arg(&fixture("tiny")), "--target-h", "0.9", "--out", arg(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn pretrain_then_tune() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.dagp");
    let data = fixture("homophilous");
    json(&gpt(&["pretrain", arg(&data), "--out", arg(&model), "--hidden", "16", "--epochs", "5", "--seed", "3"]));
    let curve = std::fs::read_to_string(dir.path().join("model.dagp.losses.csv")).unwrap();
    let mut lines = curve.lines();
    assert_eq!(lines.next(), Some("epoch,mean_loss"));
    assert_eq!(lines.count(), 5);

    let report = dir.path().join("tune.json");
    let out = gpt(&[
        "tune", "--model", arg(&model), "--data", arg(&data), "--shots", "5", "--alpha", "0.5", "--rank", "4",
        "--glora", "edges", "--epochs", "10", "--seed", "1", "--report", arg(&report),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let acc = v["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(v["predictions"].as_array().unwrap().len(), v["test_ids"].as_array().unwrap().len());
}

#[test]
fn tune_rejects_a_checkpoint_of_the_wrong_width() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.dagp");
    json(&gpt(&["pretrain", arg(&fixture("tiny")), "--out", arg(&model), "--hidden", "4", "--epochs", "1"]));
    let out = gpt(&["tune", "--model", arg(&model), "--data", arg(&fixture("homophilous")), "--epochs", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

fn small_config(dir: &Path, dataset: &Path) -> PathBuf {
    let cfg = serde_json::json!({
        "dataset": dataset,
        "seeds": [0, 1],
        "grid": { "lr": [1e-3], "weight_decay": [0.0], "hidden": [16], "rank": [4], "alpha": [0.5] },
        "allow_off_grid": true,
        "epochs": 10,
        "pretrain": { "epochs": 5 }
    });
    let path = dir.join("exp.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

#[test]
fn experiment_writes_json_and_csv_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), &fixture("homophilous"));
    let v = json(&gpt(&["experiment", "--config", arg(&cfg)]));
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["reports"][0]["accuracies"].as_array().unwrap().len(), 2);

    let csv = dir.path().join("out.csv");
    let out = gpt(&["experiment", "--config", arg(&cfg), "--report", arg(&csv)]);
    assert!(out.status.success());
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 3);
}

#[test]
fn ablate_emits_four_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), &fixture("homophilous"));
    let v = json(&gpt(&["ablate", "--config", arg(&cfg)]));
    let modes: Vec<String> = v["reports"].as_array().unwrap().iter().map(|r| r["label"].as_str().unwrap().to_string()).collect();
    assert_eq!(modes, ["dagprompt", "no_glora", "last_layer_only", "fixed_gamma"]);
}

#[test]
fn transfer_between_mismatched_widths_is_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), &fixture("homophilous"));
    let out = gpt(&["transfer", "--src", arg(&fixture("tiny")), "--dst", arg(&fixture("homophilous")), "--config", arg(&cfg)]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn sweep_reports_each_reachable_target() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), &fixture("homophilous"));
    let v = json(&gpt(&["sweep-h", "--config", arg(&cfg), "--targets", "0.3,0.7", "--modes", "prototype"]));
    let names: Vec<&str> = v["reports"].as_array().unwrap().iter().map(|r| r["dataset"].as_str().unwrap()).collect();
    assert_eq!(names, ["synthetic-h0.3", "synthetic-h0.7"]);
}

#[test]
fn invalid_config_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"dataset": "x", "grid": {"lr": [0.123], "weight_decay": [0.0], "hidden": [16], "rank": [4], "alpha": [0.5]}}"#).unwrap();
    let out = gpt(&["experiment", "--config", arg(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    let missing = gpt(&["homophily", "/nonexistent/dir"]);
    assert_eq!(missing.status.code(), Some(2));
}
