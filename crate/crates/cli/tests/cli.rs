use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ringflow(wd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ringflow"))
        .arg("--workdir")
        .arg(wd)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(wd: &Path, args: &[&str]) -> Output {
    let out = ringflow(wd, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn synth(wd: &Path, out: &str, seed: &str) {
    ok(
        wd,
        &["synth", "--preset", "ellipsoid", "--views", "3", "--res", "16", "--light", "collocated", "--seed", seed, "--level", "3", "--out", out],
    );
}

const TRAIN: &[&str] = &["train", "--scene", "s", "--level", "1", "--steps", "3"];

fn train(wd: &Path, out: &str, extra: &[&str]) {
    let mut args = TRAIN.to_vec();
    args.extend(["--out", out]);
    args.extend(extra);
    if !extra.contains(&"--seed") {
        args.extend(["--seed", "1"]);
    }
    ok(wd, &args);
}

fn read_f64(path: &Path) -> Vec<f64> {
    fs::read(path)
        .unwrap()
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

#[test]
fn synth_writes_a_complete_dataset() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "s", "7");
    let s = dir.path().join("s");
    assert!(s.join("manifest.json").exists());
    for k in 0..3 {
        for f in [format!("images/view_{k:03}.png"), format!("masks/view_{k:03}.png"), format!("gt/depth_{k:03}.png"), format!("gt/normals_{k:03}.png")] {
            assert!(s.join(&f).exists(), "{f}");
        }
    }
    synth(dir.path(), "t", "7");
    for rel in ["manifest.json", "images/view_001.png", "gt/mesh.ply"] {
        assert_eq!(fs::read(s.join(rel)).unwrap(), fs::read(dir.path().join("t").join(rel)).unwrap());
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = ringflow(dir.path(), &["synth", "--views", "3", "--res", "16"]);
    assert_eq!(out.status.code(), Some(2));
    let out = ringflow(dir.path(), &["synth", "--preset", "cube", "--views", "3", "--res", "16"]);
    assert_eq!(out.status.code(), Some(2));
    let out = ringflow(dir.path(), &["export", "--ckpt", "c", "--level", "2", "--format", "stl"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = ringflow(dir.path(), &["train", "--scene", "missing", "--epochs", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn train_writes_checkpoint_metrics_and_predictions() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "s", "3");
    train(dir.path(), "run", &["--epochs", "2"]);
    let run = dir.path().join("run");
    assert!(run.join("checkpoint.ckpt").exists());
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "epoch,stage,level,rgb,reg,silhouette,total");
    assert_eq!(lines.len(), 3);
    assert_eq!(fs::read_to_string(run.join("timing.csv")).unwrap().lines().count(), 3);
    assert!(run.join("predictions/view_002.png").exists());
    let cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["model"]["steps"], 3);

    // a training view rendered from the checkpoint equals the logged prediction
    ok(dir.path(), &["render", "--ckpt", "run/checkpoint.ckpt", "--view-file", "s/manifest.json", "--out", "r", "--raw"]);
    for k in 0..3 {
        let a = read_f64(&dir.path().join(format!("r/render_{k:03}.f64")));
        let b = read_f64(&run.join(format!("predictions/view_{k:03}.f64")));
        assert_eq!(a.len(), 16 * 16 * 3);
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-9));
    }
}

#[test]
fn resume_continues_the_same_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "s", "4");
    train(dir.path(), "full", &["--epochs", "4"]);
    train(dir.path(), "half", &["--epochs", "2"]);
    ok(dir.path(), &["train", "--scene", "s", "--resume", "half/checkpoint.ckpt", "--epochs", "4", "--out", "resumed"]);
    let wd = dir.path();
    assert_eq!(fs::read(wd.join("full/checkpoint.ckpt")).unwrap(), fs::read(wd.join("resumed/checkpoint.ckpt")).unwrap());
    assert_eq!(fs::read(wd.join("full/metrics.csv")).unwrap(), fs::read(wd.join("resumed/metrics.csv")).unwrap());
}

#[test]
fn refine_flag_engages_calibration_refinement() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "s", "5");
    train(dir.path(), "run", &["--epochs", "2", "--refine-poses", "--refine-lr", "1e-2"]);
    let run = dir.path().join("run");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("pose_changes.json")).unwrap()).unwrap();
    let rot = report["rotation_deg"].as_array().unwrap();
    assert_eq!(rot.len(), 3);
    assert!(rot.iter().any(|r| r.as_f64().unwrap() > 0.0));
    // the refined calibration is itself a loadable dataset
    ok(dir.path(), &["render", "--ckpt", "run/checkpoint.ckpt", "--view-file", "run/refined_scene/manifest.json", "--out", "r"]);
    train(dir.path(), "post", &["--epochs", "1", "--refine-after", "1", "--refine-target", "lights"]);
    assert!(dir.path().join("post/pose_report.json").exists());
}

#[test]
fn render_with_lights_and_swapped_brdf() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "s", "6");
    train(dir.path(), "a", &["--epochs", "1"]);
    train(dir.path(), "b", &["--epochs", "1", "--seed", "2"]);
    let views = r#"[{"camera_to_world": [[1,0,0,0],[0,-1,0,0],[0,0,-1,2.5],[0,0,0,1]], "fx": 20, "fy": 20, "cx": 8, "cy": 6, "width": 16, "height": 12},
                    {"camera_to_world": [[-1,0,0,0],[0,-1,0,0],[0,0,1,-2.5],[0,0,0,1]], "fx": 20, "fy": 20, "cx": 8, "cy": 6, "width": 16, "height": 12}]"#;
    fs::write(dir.path().join("novel.json"), views).unwrap();
    fs::write(dir.path().join("lights.json"), r#"[{"mode": "point", "xyz": [0, 2, 2]}]"#).unwrap();
    ok(dir.path(), &["render", "--ckpt", "a/checkpoint.ckpt", "--view-file", "novel.json", "--light-file", "lights.json", "--out", "plain"]);
    ok(dir.path(), &["render", "--ckpt", "a/checkpoint.ckpt", "--view-file", "novel.json", "--light-file", "lights.json", "--swap-brdf", "b/checkpoint.ckpt", "--out", "swapped"]);
    for k in 0..2 {
        assert!(dir.path().join(format!("plain/render_{k:03}.png")).exists());
        assert!(dir.path().join(format!("swapped/render_{k:03}.png")).exists());
    }
    assert!(!dir.path().join("plain/render_002.png").exists());
    assert_ne!(fs::read(dir.path().join("plain/render_000.png")).unwrap(), fs::read(dir.path().join("swapped/render_000.png")).unwrap());
}

fn obj_vertices(path: &Path) -> Vec<[f64; 3]> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter_map(|l| l.strip_prefix("v "))
        .map(|l| {
            let v: Vec<f64> = l.split_whitespace().take(3).map(|x| x.parse().unwrap()).collect();
            [v[0], v[1], v[2]]
        })
        .collect()
}

#[test]
fn export_levels_share_vertices() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "s", "8");
    train(dir.path(), "run", &["--epochs", "1"]);
    ok(dir.path(), &["export", "--ckpt", "run/checkpoint.ckpt", "--level", "2", "--format", "obj"]);
    ok(dir.path(), &["export", "--ckpt", "run/checkpoint.ckpt", "--level", "3", "--format", "obj"]);
    ok(dir.path(), &["export", "--ckpt", "run/checkpoint.ckpt", "--level", "3", "--format", "ply", "--out", "m.ply"]);
    let l2 = obj_vertices(&dir.path().join("mesh_l2.obj"));
    let l3 = obj_vertices(&dir.path().join("mesh_l3.obj"));
    assert_eq!(l2.len(), 10 * 16 + 2);
    assert_eq!(l3.len(), 10 * 64 + 2);
    assert_eq!(&l3[..l2.len()], &l2[..]);
    assert!(dir.path().join("m.ply").exists());
}

#[test]
fn eval_writes_report_and_error_maps() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "s", "9");
    synth(dir.path(), "h", "10");
    train(dir.path(), "run", &["--epochs", "1"]);
    let out = ok(dir.path(), &["eval", "--ckpt", "run/checkpoint.ckpt", "--scene", "s", "--heldout", "h", "--out", "e", "--error-maps"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("heldout"));
    let csv = fs::read_to_string(dir.path().join("e/eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 + 3);
    assert!(fs::read_to_string(dir.path().join("e/summary.txt")).unwrap().contains("config"));
    assert!(dir.path().join("e/error_maps/heldout_002.png").exists());

    let manifest = dir.path().join("h/manifest.json");
    let mut m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    m["views"][1].as_object_mut().unwrap().remove("depth");
    fs::write(&manifest, m.to_string()).unwrap();
    let out = ringflow(dir.path(), &["eval", "--ckpt", "run/checkpoint.ckpt", "--scene", "s", "--heldout", "h"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ground truth missing"));
}
