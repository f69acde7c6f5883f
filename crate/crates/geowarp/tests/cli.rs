use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"{
  "data": {"n": 200, "pairs": 2},
  "gae": {"epochs": 15},
  "scorer": {"kind": "gp"},
  "generation": {"n_samples": 150, "n_steps": 40},
  "geodesic": {"steps": 20, "hidden": [16, 16]},
  "transport": {"steps": 10, "batch_size": 16, "bump_hidden": [16], "field_hidden": [16], "euler_steps": 8}
}"#;

fn geowarp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geowarp"))
        .args(args)
        .env("GEOWARP_RUN_DIR", dir.join("run"))
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = geowarp(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn demo(dir: &Path) {
    std::fs::write(dir.join("cfg.json"), CONFIG).unwrap();
    let c = ["--config", "cfg.json", "--seed", "3"];
    let with = |rest: &[&'static str]| [&c[..], rest].concat();
    ok(dir, &with(&["synth", "--distances", "--pairs", "2"]));
    ok(dir, &with(&["train", "--data", "run/data.csv", "--distances", "run/distances.csv"]));
    ok(dir, &with(&["score", "--data", "run/data.csv"]));
    ok(dir, &with(&["generate", "--data", "run/data.csv", "--model", "run/gae.json", "--scorer", "run/scorer.json"]));
    ok(dir, &with(&["geodesic", "--data", "run/data.csv", "--model", "run/gae.json", "--scorer", "run/scorer.json", "--pairs", "run/pairs.csv"]));
    ok(dir, &with(&["eval", "--model", "run/gae.json", "--data", "run/data.csv", "--generated", "run/generated.csv", "--geodesics", "run/geodesics.json"]));
}

#[test]
fn hemisphere_demo_runs_and_reproduces() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    demo(a.path());
    demo(b.path());
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.path().join("run/metrics.json")).unwrap()).unwrap();
    assert!(metrics["volume_R"].is_f64(), "{metrics}");
    assert!(metrics["demap"].is_f64());
    for f in ["data.csv", "distances.csv", "gae.json", "scorer.json", "generated.csv", "diagnostics.json", "geodesics.json", "geodesic_000.csv", "metrics.json"] {
        let (x, y) = (std::fs::read(a.path().join("run").join(f)).unwrap(), std::fs::read(b.path().join("run").join(f)).unwrap());
        assert!(x == y, "{f} differs between identical runs");
    }
    for cmd in ["synth", "train", "score", "generate", "geodesic", "eval"] {
        assert!(a.path().join(format!("run/{cmd}.config.json")).exists());
    }
}

#[test]
fn synth_writes_points_with_intrinsic_coordinates() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["synth", "--kind", "hemisphere", "--n", "500", "--seed", "7"]);
    let text = std::fs::read_to_string(d.path().join("run/data.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x0,x1,x2,u,v"));
    assert_eq!(lines.count(), 500);
}

#[test]
fn unknown_kind_is_a_usage_error() {
    let d = tempfile::tempdir().unwrap();
    let out = geowarp(d.path(), &["synth", "--kind", "unknown"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("hemisphere") && err.contains("torus"), "{err}");
}

#[test]
fn every_command_has_help() {
    let d = tempfile::tempdir().unwrap();
    for cmd in ["synth", "train", "score", "generate", "geodesic", "transport", "eval"] {
        let out = geowarp(d.path(), &[cmd, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{cmd}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("--run-dir"));
    }
}

#[test]
fn eval_rejects_mismatched_dimensions() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("cfg.json"), r#"{"gae": {"epochs": 2}}"#).unwrap();
    ok(d.path(), &["--config", "cfg.json", "synth", "--n", "60"]);
    ok(d.path(), &["--config", "cfg.json", "train", "--data", "run/data.csv"]);
    ok(d.path(), &["synth", "--n", "60", "--dim", "5", "--out", "wide.csv"]);
    let out = geowarp(d.path(), &["eval", "--model", "run/gae.json", "--data", "run/wide.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimension"));
}

#[test]
fn checkpoint_with_future_schema_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["synth", "--n", "60"]);
    std::fs::write(d.path().join("future.json"), r#"{"schema_version": 99}"#).unwrap();
    let out = geowarp(d.path(), &["eval", "--model", "future.json", "--data", "run/data.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema"));
}
