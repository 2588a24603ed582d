use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use paramgrade::color_ops::{apply_params, GradingParams};
use paramgrade::imaging::{load_image, read_frames};
use paramgrade::lut::read_cube;

fn sample() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/sample")
}

fn paramgrade(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_paramgrade")).args(args).output().unwrap()
}

fn retouch(out: &Path, extra: &[&str]) -> Output {
    let frames = sample().join("frames");
    let style = sample().join("style.png");
    let mut args = vec![
        "retouch",
        "--content",
        frames.to_str().unwrap(),
        "--style",
        style.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    paramgrade(&args)
}

fn fast_config(dir: &Path) -> PathBuf {
    let path = dir.join("fast.toml");
    std::fs::write(&path, "iters_finetune = 4\nimage_size = 32\nseed = 11\n").unwrap();
    path
}

fn assert_ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn fresh_model_without_finetune_leaves_frames_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let out = retouch(dir.path(), &["--no-finetune"]);
    assert_ok(&out);
    let input = read_frames(sample().join("frames")).unwrap();
    let output = read_frames(dir.path().join("frames")).unwrap();
    assert_eq!(input.len(), output.len());
    for (a, b) in input.frames().iter().zip(output.frames()) {
        assert_eq!(a.to_rgb8(), b.to_rgb8());
    }
    let p = GradingParams::from_json(&std::fs::read_to_string(dir.path().join("params.json")).unwrap()).unwrap();
    assert_eq!(p, GradingParams::IDENTITY);
}

#[test]
fn saturation_override_desaturates() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&retouch(dir.path(), &["--no-finetune", "--saturation=0"]));
    let input = read_frames(sample().join("frames")).unwrap();
    let output = read_frames(dir.path().join("frames")).unwrap();
    let grey = GradingParams {
        saturation: 0.0,
        ..GradingParams::IDENTITY
    };
    for (a, b) in input.frames().iter().zip(output.frames()) {
        assert_eq!(apply_params(a, &grey).to_rgb8(), b.to_rgb8());
        assert!(b.to_rgb8().chunks(3).all(|px| px[0] == px[1] && px[1] == px[2]));
    }
}

#[test]
fn overrides_round_trip_through_params_json() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&retouch(
        dir.path(),
        &["--no-finetune", "--brightness=-0.123", "--hue", "0.3", "--lut-size", "9"],
    ));
    let p = GradingParams::from_json(&std::fs::read_to_string(dir.path().join("params.json")).unwrap()).unwrap();
    assert_eq!(p.brightness, -0.123f32);
    assert_eq!(p.hue, 0.3f32);
    assert_eq!(read_cube(dir.path().join("grade.cube")).unwrap().size(), 9);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["predicted"]["brightness"], 0.0);
    assert_eq!(report["effective"]["brightness"].as_f64().unwrap() as f32, -0.123f32);
}

#[test]
fn out_of_range_override_fails_with_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = retouch(dir.path(), &["--no-finetune", "--gamma=5"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("overrides:"));
}

#[test]
fn missing_style_fails_with_stage() {
    let dir = tempfile::tempdir().unwrap();
    let frames = sample().join("frames");
    let out = paramgrade(&[
        "retouch",
        "--content",
        frames.to_str().unwrap(),
        "--style",
        "/nonexistent/style.png",
        "--output",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("load style:"));
}

#[test]
fn finetuned_run_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fast_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert_ok(&retouch(out, &["--config", cfg.to_str().unwrap()]));
    }
    let read = |p: &Path, name: &str| std::fs::read(p.join(name)).unwrap();
    assert_eq!(read(&a, "params.json"), read(&b, "params.json"));
    assert_eq!(read(&a, "grade.cube"), read(&b, "grade.cube"));
    for i in 0..6 {
        let f = format!("frames/frame_{i:06}.png");
        assert_eq!(read(&a, &f), read(&b, &f));
    }
    let report: serde_json::Value = serde_json::from_slice(&read(&a, "report.json")).unwrap();
    assert_eq!(report["finetune_iters"], 4);
    let stages: Vec<&str> = report["timings"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["stage"].as_str().unwrap())
        .collect();
    assert!(stages.contains(&"finetune") && stages.contains(&"grade"), "{stages:?}");
}

#[test]
fn bake_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let params = dir.path().join("p.json");
    std::fs::write(&params, GradingParams { contrast: 1.4, ..GradingParams::IDENTITY }.to_json()).unwrap();
    let cube = dir.path().join("g.cube");
    assert_ok(&paramgrade(&[
        "bake",
        "--params",
        params.to_str().unwrap(),
        "--size",
        "4",
        "--output",
        cube.to_str().unwrap(),
    ]));
    assert_eq!(read_cube(&cube).unwrap().size(), 4);
    std::fs::write(&params, r#"{"brightness": 3.0}"#).unwrap();
    let out = paramgrade(&["bake", "--params", params.to_str().unwrap(), "--output", cube.to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn pretrain_then_retouch_with_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("pre.toml");
    std::fs::write(
        &cfg,
        "iters_pretrain = 3\nbatch_size_pretrain = 2\nimage_size = 32\ncheckpoint_every = 2\n",
    )
    .unwrap();
    let ckpt = dir.path().join("ckpt");
    let pairs = sample().join("pairs");
    assert_ok(&paramgrade(&[
        "pretrain",
        "--config",
        cfg.to_str().unwrap(),
        "--corpus",
        pairs.to_str().unwrap(),
        "--output",
        ckpt.to_str().unwrap(),
    ]));
    assert!(ckpt.join("checkpoint_000002.ckpt").is_file());
    let csv = std::fs::read_to_string(ckpt.join("loss.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "iter,loss_total,loss_style,loss_content,loss_color");
    assert_eq!(lines.len(), 4);

    let out = dir.path().join("out");
    let final_ckpt = ckpt.join("final.ckpt");
    assert_ok(&retouch(&out, &["--no-finetune", "--checkpoint", final_ckpt.to_str().unwrap()]));
    let p = GradingParams::from_json(&std::fs::read_to_string(out.join("params.json")).unwrap()).unwrap();
    assert!(p.is_in_range());
}

#[test]
fn single_image_content() {
    let dir = tempfile::tempdir().unwrap();
    let content = sample().join("pairs/content_1.png");
    let style = sample().join("pairs/style_1.png");
    assert_ok(&paramgrade(&[
        "retouch",
        "--content",
        content.to_str().unwrap(),
        "--style",
        style.to_str().unwrap(),
        "--output",
        dir.path().to_str().unwrap(),
        "--no-finetune",
        "--temperature=0.2",
    ]));
    let out = read_frames(dir.path().join("frames")).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out.width(), load_image(&content).unwrap().width());
}
