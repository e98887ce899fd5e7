use std::path::Path;
use std::process::Command;

use motionctl_core::grid::BitMask2D;
use motionctl_core::io::{encode_mask_pgm, encode_pgm, pnm::Pgm};
use serde_json::Value;

fn run(args: &[&str]) -> Value {
    let mut out = Vec::new();
    let mut argv = vec!["motionctl"];
    argv.extend_from_slice(args);
    motionctl::run(argv, &mut out).unwrap_or_else(|e| panic!("{args:?}: {e}"));
    serde_json::from_slice(&out).unwrap()
}

fn run_err(args: &[&str]) -> String {
    let mut argv = vec!["motionctl"];
    argv.extend_from_slice(args);
    motionctl::run(argv, &mut Vec::new()).unwrap_err().message
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .flatten()
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect();
    v.sort();
    v
}

fn one_blob(dir: &Path) {
    let scene = r#"{"frames":8,"height":32,"width":32,
        "background":{"color":[0.2,0.3,0.4],"texture":0.1},
        "blobs":[{"center":[12,14],"radius":6,"color":[0.9,0.5,0.1],"texture":0.2,
                  "motion":{"type":"constant","velocity":[1.0,0.5]}}],
        "seed":5}"#;
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(dir.join("scene_in.json"), scene).unwrap();
}

#[test]
fn condition_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    let clip = t.path().join("clip");
    run(&["synth", "--random", "--seed", "2", "--frames", "6", "--height", "32", "--width", "32", "--out", p(&clip)]);
    let a = t.path().join("a");
    let b = t.path().join("b");
    let c = t.path().join("c");
    for out in [&a, &b] {
        run(&["condition", "--flow", p(&clip), "--k", "8", "--r-min", "0.95", "--seed", "7", "--out", p(out)]);
    }
    run(&["condition", "--flow", p(&clip), "--k", "8", "--r-min", "0.5", "--seed", "8", "--out", p(&c)]);
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
    assert_ne!(dir_bytes(&a), dir_bytes(&c));

    // Keep semantics with r_min 0.95 retains nearly every region.
    let keep = t.path().join("keep");
    let v = run(&["condition", "--flow", p(&clip), "--k", "4", "--semantics", "keep", "--seed", "7", "--out", p(&keep)]);
    let sparse = run(&["condition", "--flow", p(&clip), "--k", "4", "--seed", "7", "--out", p(&t.path().join("sparse"))]);
    assert!(v["tracks"].as_u64().unwrap() > sparse["tracks"].as_u64().unwrap());
}

#[test]
fn one_blob_pipeline_tracks_within_a_pixel() {
    let t = tempfile::tempdir().unwrap();
    one_blob(t.path());
    let clip = t.path().join("clip");
    run(&["synth", "--scene", p(&t.path().join("scene_in.json")), "--out", p(&clip)]);
    let cond = t.path().join("cond");
    run(&["condition", "--mode", "train", "--flow", p(&clip), "--k", "4", "--r-min", "0.5", "--seed", "1", "--out", p(&cond)]);
    let prev = t.path().join("prev");
    run(&["preview", "--image", p(&clip.join("frame_0001.png")), "--cond", p(&cond), "--write-flow", "--out", p(&prev)]);
    let v = run(&["eval", "--clip", p(&prev), "--traj", p(&cond.join("tracks.json")), "--tracker", "oracle"]);
    let md_vid = v["report"]["md_vid"].as_f64().unwrap();
    assert!(md_vid <= 1.0, "{v}");
}

#[test]
fn static_clip_is_fully_consistent() {
    let t = tempfile::tempdir().unwrap();
    let scene = r#"{"frames":5,"height":16,"width":16,"background":{"color":[0.5,0.5,0.5],"texture":0.3},"blobs":[],"seed":1}"#;
    std::fs::write(t.path().join("s.json"), scene).unwrap();
    let clip = t.path().join("clip");
    run(&["synth", "--scene", p(&t.path().join("s.json")), "--out", p(&clip)]);
    let traj = t.path().join("t.json");
    std::fs::write(&traj, r#"{"version":1,"L":5,"tracks":[{"points":[[4,4]]}]}"#).unwrap();
    let v = run(&["eval", "--clip", p(&clip), "--traj", p(&traj)]);
    assert!((v["report"]["frame_consistency"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert_eq!(v["report"]["md_vid"].as_f64().unwrap(), 0.0);
}

#[test]
fn infer_mode_from_strokes_and_brush() {
    let t = tempfile::tempdir().unwrap();
    let brush = t.path().join("brush.pgm");
    std::fs::write(&brush, encode_mask_pgm(&BitMask2D::from_fn(16, 16, |x, y| x < 8 && y < 8))).unwrap();
    let traj = t.path().join("t.json");
    std::fs::write(&traj, r#"{"version":1,"L":4,"tracks":[{"points":[[2,2],[5,2]]}]}"#).unwrap();
    let cond = t.path().join("cond");
    let v = run(&["condition", "--mode", "infer", "--traj", p(&traj), "--brush", p(&brush), "--k", "4", "--out", p(&cond)]);
    assert_eq!(v["frames"], 4);
    assert_eq!(v["mask_pixels"], 64);
    assert!(cond.join("traj_0004.flo").exists() && cond.join("mask_0004.pgm").exists());
}

#[test]
fn camera_trajectories_feed_condition() {
    let t = tempfile::tempdir().unwrap();
    let depth = t.path().join("d.pgm");
    let pgm = Pgm {
        width: 32,
        height: 32,
        maxval: 65535,
        samples: vec![10_000; 32 * 32],
    };
    std::fs::write(&depth, encode_pgm(&pgm)).unwrap();
    let k = t.path().join("k.json");
    std::fs::write(&k, r#"{"fx":100,"fy":100,"cx":16,"cy":16}"#).unwrap();
    let poses = t.path().join("p.json");
    std::fs::write(
        &poses,
        r#"{"poses":[{"R":[1,0,0,0,1,0,0,0,1],"t":[0,0,0]},{"R":[1,0,0,0,1,0,0,0,1],"t":[0.1,0,0]},{"R":[1,0,0,0,1,0,0,0,1],"t":[0.2,0,0]}]}"#,
    )
    .unwrap();
    let traj = t.path().join("cam.json");
    let mask = t.path().join("ones.pgm");
    let v = run(&["camera", "--depth", p(&depth), "--intrinsics", p(&k), "--poses", p(&poses), "--stride", "8", "--out", p(&traj), "--mask-out", p(&mask)]);
    assert_eq!(v["tracks"], 16);
    assert_eq!(v["dropped"], 0);
    let file: Value = serde_json::from_slice(&std::fs::read(&traj).unwrap()).unwrap();
    let pts = &file["tracks"][0]["points"];
    assert!((pts[1][0].as_f64().unwrap() - pts[0][0].as_f64().unwrap() + 1.0).abs() < 1e-9);
    let cond = t.path().join("cond");
    run(&["condition", "--mode", "infer", "--traj", p(&traj), "--brush", p(&mask), "--k", "8", "--out", p(&cond)]);
}

#[test]
fn train_toy_writes_checkpoint_and_losses() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    run(&["synth", "--random", "--count", "3", "--frames", "4", "--height", "16", "--width", "16", "--out", p(&data)]);
    let out = t.path().join("run");
    let v = run(&["train-toy", "--dataset", p(&data), "--steps", "5", "--out", p(&out)]);
    assert_eq!(v["clips"], 3);
    assert_eq!(v["lora_rank_requested"], 32);
    assert_eq!(v["lora_rank"], 3);
    let csv = std::fs::read_to_string(out.join("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    let ckpt = std::fs::read(out.join("model.ckpt")).unwrap();
    let odd = t.path().join("odd");
    run(&["synth", "--random", "--frames", "4", "--height", "21", "--width", "19", "--out", p(&odd)]);
    let v = run(&["train-toy", "--dataset", p(&odd), "--steps", "2", "--out", p(&t.path().join("odd_run"))]);
    assert_eq!(v["clips"], 1);
    let model = motionctl_core::modulate::decode_checkpoint(&ckpt).unwrap();
    assert_eq!(model.config.lora_rank, 3);
}

#[test]
fn config_file_and_env_seed() {
    let t = tempfile::tempdir().unwrap();
    let clip = t.path().join("clip");
    run(&["synth", "--random", "--frames", "4", "--height", "32", "--width", "32", "--out", p(&clip)]);
    let cfg = t.path().join("c.toml");
    std::fs::write(&cfg, "[condition]\nk = 4\nr-min = 0.5\nseed = 11\n").unwrap();
    let a = t.path().join("a");
    let b = t.path().join("b");
    run(&["--config", p(&cfg), "condition", "--flow", p(&clip), "--out", p(&a)]);
    run(&["condition", "--flow", p(&clip), "--k", "4", "--r-min", "0.5", "--seed", "11", "--out", p(&b)]);
    assert_eq!(dir_bytes(&a), dir_bytes(&b));

    let bin = env!("CARGO_BIN_EXE_motionctl");
    let c = t.path().join("c");
    let status = Command::new(bin)
        .args(["condition", "--flow", p(&clip), "--k", "4", "--r-min", "0.5", "--out", p(&c)])
        .env("MOTIONCTL_SEED", "11")
        .output()
        .unwrap();
    assert!(status.status.success());
    assert_eq!(dir_bytes(&a), dir_bytes(&c));
}

#[test]
fn errors_are_single_line_and_nonzero() {
    let t = tempfile::tempdir().unwrap();
    let bad = t.path().join("bad.json");
    std::fs::write(&bad, r#"{"version":2,"L":4,"tracks":[]}"#).unwrap();
    let brush = t.path().join("b.pgm");
    std::fs::write(&brush, encode_mask_pgm(&BitMask2D::ones(8, 8))).unwrap();
    let bin = env!("CARGO_BIN_EXE_motionctl");
    let out = Command::new(bin)
        .args(["condition", "--mode", "infer", "--traj", p(&bad), "--brush", p(&brush), "--out", p(&t.path().join("o"))])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(out.stdout.is_empty());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.contains("bad.json") && err.contains("trajectory.version"), "{err}");

    let out = Command::new(bin).args(["eval", "--nope"]).output().unwrap();
    assert!(!out.status.success());
    assert_eq!(String::from_utf8(out.stderr).unwrap().lines().count(), 1);

    assert!(run_err(&["condition", "--mode", "infer", "--out", "x"]).contains("--traj"));
    assert!(run_err(&["synth", "--out", "x"]).contains("--scene"));
}

#[test]
fn help_exits_zero() {
    let out = Command::new(env!("CARGO_BIN_EXE_motionctl")).arg("--help").output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("train-toy"));
}
