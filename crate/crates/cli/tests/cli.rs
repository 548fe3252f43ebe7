//! End-to-end checks of the `slalom` binary on a tiny corpus.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use slalom_core::dataset::{load_dataset, save_dataset, Sample};
use slalom_core::trace::read_trace_csv;

fn slalom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slalom")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

/// Smoke corpus and a one-epoch model, built once for the whole file.
fn fixture() -> &'static (tempfile::TempDir, PathBuf, PathBuf) {
    static F: OnceLock<(tempfile::TempDir, PathBuf, PathBuf)> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let model = dir.path().join("model");
        let o = slalom(&["collect", "--seed", "3", "--runs", "10", "--train", "8", "--out", &s(&data)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let o = slalom(&["train", "--seed", "3", "--data", &s(&data), "--epochs", "1", "--out", &s(&model)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        (dir, data, model)
    })
}

#[test]
fn collect_writes_split_corpus() {
    let (_, data, _) = fixture();
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(data.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["train_runs"].as_array().unwrap().len(), 8);
    assert_eq!(manifest["test_runs"].as_array().unwrap().len(), 2);
    let train = load_dataset(&data.join("train.csv")).unwrap();
    let test = load_dataset(&data.join("test.csv")).unwrap();
    assert!(train.iter().all(|a| test.iter().all(|b| a.run_id != b.run_id)));
}

#[test]
fn train_emits_model_report_and_loss_curve() {
    let (_, _, model) = fixture();
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(model.join("fit_report.json")).unwrap()).unwrap();
    assert!(report["test"]["mse"].is_number());
    assert!(report["train"]["r2"].is_number());
    assert_eq!(report["history"].as_array().unwrap().len(), 1);
    let svg = fs::read_to_string(model.join("loss_curve.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("polyline"));
}

#[test]
fn missing_dataset_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = slalom(&["train", "--seed", "1", "--data", &s(&tmp.path().join("nope")), "--out", &s(tmp.path())]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope"));
    assert_eq!(code(&slalom(&["train", "--seed", "1"])), 2);
}

#[test]
fn seed_is_required() {
    let tmp = tempfile::tempdir().unwrap();
    let o = slalom(&["collect", "--runs", "2", "--train", "1", "--out", &s(tmp.path())]);
    assert_eq!(code(&o), 2);
    assert!(!tmp.path().join("train.csv").exists());
}

#[test]
fn bad_config_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "seed = 1\n[gains]\np = -2.0\n").unwrap();
    assert_eq!(code(&slalom(&["collect", "--config", &s(&cfg), "--out", &s(tmp.path())])), 2);
    fs::write(&cfg, "seed = 1\nbogus = 3\n").unwrap();
    assert_eq!(code(&slalom(&["collect", "--config", &s(&cfg), "--out", &s(tmp.path())])), 2);
}

#[test]
fn eval_reports_both_splits() {
    let (dir, data, model) = fixture();
    let out = dir.path().join("eval");
    let o = slalom(&["eval-offline", "--seed", "3", "--model", &s(&model.join("model.json")), "--data", &s(data), "--out", &s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("eval_report.json")).unwrap()).unwrap();
    assert!(r["offline"]["train"]["mse"].is_number() && r["offline"]["test"]["mse"].is_number());
}

#[test]
fn constant_target_reports_undefined_r2() {
    let (dir, data, model) = fixture();
    let one = load_dataset(&data.join("test.csv")).unwrap()[0];
    let dup: Vec<Sample> = vec![one; 5];
    let path = dir.path().join("dup.csv");
    save_dataset(&path, &dup).unwrap();
    let out = dir.path().join("eval_dup");
    let o = slalom(&["eval-offline", "--seed", "3", "--model", &s(&model.join("model.json")), "--data", &s(&path), "--out", &s(&out)]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("undefined"));
}

#[test]
fn model_version_mismatch_names_both() {
    let (dir, data, model) = fixture();
    let mut m: serde_json::Value = serde_json::from_str(&fs::read_to_string(model.join("model.json")).unwrap()).unwrap();
    m["feature_version"] = serde_json::json!(99);
    let bad = dir.path().join("bad_model.json");
    fs::write(&bad, m.to_string()).unwrap();
    let o = slalom(&["eval-offline", "--seed", "3", "--model", &s(&bad), "--data", &s(data), "--out", &s(dir.path())]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("99") && err.contains('1'), "{err}");
}

#[test]
fn fixed_profile_trial_is_deterministic_and_plottable() {
    let (dir, _, model) = fixture();
    let m = s(&model.join("model.json"));
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = slalom(&[
            "run-closedloop", "--seed", "3", "--model", &m, "--trials", "1", "--profile", "fixed:40", "--compare-expert",
            "--out", &s(&out),
        ]);
        assert!(code(&o) == 0 || code(&o) == 1, "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b) = (run("fixed_a"), run("fixed_b"));
    let trace = fs::read(a.join("traces/trial_00.csv")).unwrap();
    assert_eq!(trace, fs::read(b.join("traces/trial_00.csv")).unwrap());
    let rows = read_trace_csv(&trace[..]).unwrap();
    assert!(!rows.is_empty() && rows.iter().all(|r| (r.speed_kmh - 40.0).abs() < 1e-9));
    for f in ["paths.svg", "speed.svg", "steering.svg", "steering_comparison.svg", "closedloop_report.json"] {
        assert!(a.join(f).is_file(), "{f}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("closedloop_report.json")).unwrap()).unwrap();
    assert_eq!(report["closed_loop"]["trials"], 1);
    assert_eq!(report["comparison"]["lane_changes"].as_array().unwrap().len(), 3);

    let plots = dir.path().join("plots");
    let o = slalom(&[
        "plot", "--seed", "3", "--out", &s(&plots), &s(&a.join("traces/trial_00.csv")), &s(&a.join("traces/expert.csv")),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let paths = fs::read_to_string(plots.join("paths.svg")).unwrap();
    // three cone sets drawn as boxes, plus the background and the frame
    assert_eq!(paths.matches("<rect").count(), 5);
    assert!(plots.join("steering_comparison.svg").is_file());
}

#[test]
fn plot_rejects_empty_and_malformed_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.csv");
    fs::write(&empty, "t,x,y,heading,speed_kmh,wheel_angle,wheel_rate,torque,collision_flag\n").unwrap();
    let out = tmp.path().join("plots");
    let o = slalom(&["plot", "--seed", "1", "--out", &s(&out), &s(&empty)]);
    assert_ne!(code(&o), 0);
    assert!(!out.join("paths.svg").exists());

    let bad = tmp.path().join("bad.csv");
    fs::write(&bad, "t,x,y,heading,speed_kmh,wheel_angle,wheel_rate,torque,collision_flag\n0,1,2,3,4,5,6,7,0\n0,1,oops,3,4,5,6,7,0\n").unwrap();
    let o = slalom(&["plot", "--seed", "1", "--out", &s(&out), &s(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("row 3"));
}
