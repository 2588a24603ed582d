use std::path::{Path, PathBuf};

use paramgrade::color_ops::{GradingParams, PARAM_RANGES};
use paramgrade::encoder::PerceptualEncoder;
use paramgrade::error::Error;
use paramgrade::fixtures;
use paramgrade::imaging::{load_image, RgbImage};
use paramgrade::pipeline::predict_video_params;
use paramgrade::predictor::PredictorModel;
use paramgrade::training::{finetune, pretrain, select_keyframes, TrainConfig};

fn pairs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/sample/pairs")
}

fn pair(k: usize) -> (RgbImage, RgbImage) {
    let d = pairs_dir();
    (
        load_image(d.join(format!("content_{k}.png"))).unwrap(),
        load_image(d.join(format!("style_{k}.png"))).unwrap(),
    )
}

fn small(iters: usize) -> TrainConfig {
    TrainConfig {
        image_size: 32,
        iters_finetune: iters,
        iters_pretrain: iters,
        batch_size_pretrain: 2,
        corpus_dir: pairs_dir(),
        ..TrainConfig::default()
    }
}

fn fresh(cfg: &TrainConfig, seed: u64) -> PredictorModel {
    let enc = PerceptualEncoder::from_spec(&cfg.encoder).unwrap();
    PredictorModel::new(cfg.model_config(&enc), seed)
}

#[test]
fn same_seed_same_loss_curve() {
    let cfg = small(12);
    let (c, s) = pair(2);
    let a = finetune(fresh(&cfg, 5), std::slice::from_ref(&c), &s, &cfg).unwrap();
    let b = finetune(fresh(&cfg, 5), std::slice::from_ref(&c), &s, &cfg).unwrap();
    assert_eq!(a.losses, b.losses);
    assert_eq!(a.params, b.params);

    let p1 = pretrain(&small(4)).unwrap();
    let p2 = pretrain(&small(4)).unwrap();
    assert_eq!(p1.losses, p2.losses);
    assert_eq!(p1.model.params(), p2.model.params());
}

#[test]
fn zero_iterations_returns_current_prediction() {
    let pre = pretrain(&small(3)).unwrap().model;
    let cfg = small(0);
    let keys: Vec<RgbImage> = (0..3).map(|k| pair(k).0).collect();
    let style = pair(4).1;
    let expected = predict_video_params(&pre, &keys, &style).unwrap();
    let out = finetune(pre, &keys, &style, &cfg).unwrap();
    assert!(out.losses.is_empty());
    assert_eq!(out.params, expected);
}

#[test]
fn content_equal_to_style_stays_near_identity() {
    let cfg = TrainConfig {
        image_size: 64,
        iters_finetune: 100,
        ..TrainConfig::default()
    };
    let (c, _) = pair(1);
    let out = finetune(fresh(&cfg, 0), std::slice::from_ref(&c), &c, &cfg).unwrap();
    // The starting loss is zero up to the histogram epsilon, so 10% of it
    // needs an absolute floor.
    let first = out.losses[0].loss.total;
    let last = out.losses.last().unwrap().loss.total;
    assert!(last <= first + 0.1 * first.abs() + 1e-2, "{first} -> {last}");
    for ((v, r), name) in out.params.to_array().iter().zip(PARAM_RANGES).zip(paramgrade::color_ops::PARAM_NAMES) {
        assert!((v - r.identity).abs() <= 0.1 * (r.max - r.min), "{name} = {v}");
    }
}

/// Share of moving-average steps that do not rise. Once the loss has
/// converged the average only jitters in its last digits, so rises below
/// `rel_tol` of the current value count as flat.
fn smoothed_descent_fraction(losses: &[f64], window: usize, rel_tol: f64) -> f64 {
    let ma: Vec<f64> = losses.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect();
    let steps = ma.windows(2).count();
    ma.windows(2).filter(|w| w[1] <= w[0] + rel_tol * w[0].abs()).count() as f64 / steps as f64
}

#[test]
fn smoothed_loss_mostly_decreases() {
    let cfg = TrainConfig::default();
    for k in 0..5 {
        let (c, s) = pair(k);
        let out = finetune(fresh(&cfg, 0), std::slice::from_ref(&c), &s, &cfg).unwrap();
        let totals: Vec<f64> = out.losses.iter().map(|r| r.loss.total).collect();
        assert_eq!(totals.len(), 500);
        let frac = smoothed_descent_fraction(&totals, 50, 1e-4);
        assert!(frac >= 0.8, "pair {k}: only {frac:.2} of smoothed steps non-increasing");
    }
}

#[test]
fn non_finite_loss_aborts() {
    let cfg = small(3);
    let bad = RgbImage::filled(32, 32, [f32::NAN, 0.5, 0.5]);
    let style = pair(0).1;
    match finetune(fresh(&cfg, 0), &[bad], &style, &cfg) {
        Err(Error::NonFiniteLoss { iter: 0, .. }) => {}
        other => panic!("expected abort, got {other:?}"),
    }
}

#[test]
fn keyframes_on_sample_clip() {
    let clip = fixtures::sample_clip(25, 48, 36);
    let keys = select_keyframes(&clip, 4).unwrap();
    assert_eq!(keys.len(), 4);
    assert_eq!(keys.indices[0], 0);
    assert!(keys.indices.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(keys, select_keyframes(&clip, 4).unwrap());
}

#[test]
fn pretrain_writes_checkpoints_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        output_dir: Some(dir.path().to_path_buf()),
        checkpoint_every: 2,
        ..small(5)
    };
    let out = pretrain(&cfg).unwrap();
    assert_eq!(out.losses.len(), 5);
    assert!(dir.path().join("checkpoint_000002.ckpt").is_file());
    assert!(dir.path().join("checkpoint_000004.ckpt").is_file());
    let restored = PredictorModel::load(dir.path().join("final.ckpt")).unwrap();
    assert_eq!(restored.params(), out.model.params());
    let csv = std::fs::read_to_string(dir.path().join("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert!(out.losses.iter().all(|r| r.loss.is_finite()));
    assert_ne!(predict_video_params(&out.model, &[pair(0).0], &pair(1).1).unwrap(), GradingParams::IDENTITY);
}
