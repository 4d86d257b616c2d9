use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const CONFIG: &str = r#"{
  "sampler": {"n_samples": 150},
  "training": {"samples_per_scene": 150, "max_hands_per_class": 60}
}"#;

fn gpd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpd"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn gpd")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = gpd(dir, args);
    assert!(
        out.status.success(),
        "gpd {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.json"), CONFIG).unwrap();
    ok(
        dir.path(),
        &["synth", "--config", "cfg.json", "--preset", "single", "--count", "2", "--seed", "3", "--out", "corpus"],
    );
    dir
}

fn jsonl(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn synth_is_reproducible() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["synth", "--config", "cfg.json", "--preset", "single", "--count", "2", "--seed", "3", "--out", "again"]);
    for f in ["corpus.json", "scene_0001/scene.json", "scene_0001/view0.pcd", "scene_0001/view1.pcd"] {
        assert_eq!(std::fs::read(d.join("corpus").join(f)).unwrap(), std::fs::read(d.join("again").join(f)).unwrap());
    }
}

#[test]
fn sample_then_label_from_pcd_views() {
    let dir = setup();
    let d = dir.path();
    let scene = d.join("corpus/scene_0000");
    let v0 = scene.join("view0.pcd");
    let v1 = scene.join("view1.pcd");
    let (v0, v1) = (v0.to_str().unwrap(), v1.to_str().unwrap());
    ok(d, &["sample", "--config", "cfg.json", "--cloud", v0, "--cloud", v1, "--out", "hands.jsonl"]);
    let hands = jsonl(&d.join("hands.jsonl"));
    assert!(!hands.is_empty());
    assert_eq!(hands[0]["rotation"].as_array().unwrap().len(), 9);

    let stdout = ok(
        d,
        &["label", "--config", "cfg.json", "--cloud", v0, "--cloud", v1, "--hands", "hands.jsonl", "--out", "labels.jsonl"],
    );
    assert!(stdout.starts_with("positive "));
    let labels = jsonl(&d.join("labels.jsonl"));
    assert_eq!(labels.len(), hands.len());
    for l in &labels {
        assert!(["positive", "negative", "indeterminate"].contains(&l["label"].as_str().unwrap()), "{l}");
    }
}

#[test]
fn train_detect_eval_round() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["train", "--config", "cfg.json", "--corpus", "corpus", "--out", "model.json", "--dataset", "data"]);
    let report: Value = serde_json::from_slice(&std::fs::read(d.join("model.report.json")).unwrap()).unwrap();
    assert!(report["n_support"].as_u64().unwrap() > 0);
    assert!(d.join("data.bin").exists() && d.join("data.json").exists());

    ok(d, &["xval", "--dataset", "data", "--folds", "3", "--out", "xval.json"]);
    let xv: Value = serde_json::from_slice(&std::fs::read(d.join("xval.json")).unwrap()).unwrap();
    assert_eq!(xv["fold_accuracies"].as_array().unwrap().len(), 3);

    let detect = |out: &str| {
        ok(
            d,
            &["detect", "--config", "cfg.json", "--scene", "corpus/scene_0001", "--model", "model.json", "--out", out],
        )
    };
    detect("a.jsonl");
    detect("b.jsonl");
    assert_eq!(std::fs::read(d.join("a.jsonl")).unwrap(), std::fs::read(d.join("b.jsonl")).unwrap());
    assert_eq!(
        std::fs::read(d.join("a.summary.json")).unwrap(),
        std::fs::read(d.join("b.summary.json")).unwrap()
    );
    let grasps = jsonl(&d.join("a.jsonl"));
    for (i, g) in grasps.iter().enumerate() {
        assert_eq!(g["rank"].as_u64().unwrap() as usize, i);
    }
    let sizes: Vec<u64> = grasps.iter().map(|g| g["size"].as_u64().unwrap()).collect();
    assert!(sizes.windows(2).all(|w| w[0] >= w[1]));

    ok(d, &["eval", "--config", "cfg.json", "--corpus", "corpus", "--no-classify", "--out", "eval.csv"]);
    let csv = std::fs::read_to_string(d.join("eval.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("scene,reported,"));
    assert!(lines[3].starts_with("mean,"));
}

#[test]
fn detect_requires_a_classifier_choice() {
    let dir = setup();
    let out = gpd(dir.path(), &["detect", "--scene", "corpus/scene_0000", "--out", "g.jsonl"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--model"));
}

#[test]
fn bad_inputs_fail_with_context() {
    let dir = setup();
    let d = dir.path();
    let out = gpd(d, &["detect", "--scene", "missing", "--label-classify", "--out", "g.jsonl"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("scene missing"));

    std::fs::write(d.join("bad.json"), r#"{"selection": {"dist_thresh": -1.0}}"#).unwrap();
    let out = gpd(d, &["sample", "--config", "bad.json", "--scene", "corpus/scene_0000", "--out", "h.jsonl"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("config bad.json"));

    let out = gpd(d, &["sample", "--scene", "corpus/scene_0000", "--workspace", "1,1,1,0,0,0", "--out", "h.jsonl"]);
    assert!(!out.status.success());
}
