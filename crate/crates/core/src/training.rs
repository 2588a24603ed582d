//! Pre-training on an image corpus and test-time fine-tuning on a video's
//! keyframes.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::color_ops::{apply_params, apply_params_vjp, GradingParams, PARAM_COUNT};
use crate::encoder::{EncoderSpec, Features, PerceptualEncoder};
use crate::error::{Error, Result};
use crate::imaging::{load_image, RgbImage, VideoFrames};
use crate::losses::{LossBreakdown, LossTargets, LossWeights, DEFAULT_BINS};
use crate::predictor::{prepare, ModelConfig, PredictorModel, DEFAULT_HIDDEN, DEFAULT_IMAGE_SIZE};

pub const KEYFRAME_HIST_BINS: usize = 32;
pub const DEFAULT_KEYFRAMES: usize = 4;

fn default_lr() -> f64 {
    1e-4
}
fn default_batch_pretrain() -> usize {
    6
}
fn default_iters_pretrain() -> usize {
    20_000
}
fn default_one() -> usize {
    1
}
fn default_iters_finetune() -> usize {
    500
}
fn default_image_size() -> usize {
    DEFAULT_IMAGE_SIZE
}
fn default_bins() -> usize {
    DEFAULT_BINS
}
fn default_keyframes() -> usize {
    DEFAULT_KEYFRAMES
}
fn default_hidden() -> usize {
    DEFAULT_HIDDEN
}
fn default_checkpoint_every() -> usize {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch_pretrain")]
    pub batch_size_pretrain: usize,
    #[serde(default = "default_iters_pretrain")]
    pub iters_pretrain: usize,
    #[serde(default = "default_one")]
    pub batch_size_finetune: usize,
    #[serde(default = "default_iters_finetune")]
    pub iters_finetune: usize,
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    #[serde(default)]
    pub loss_weights: LossWeights,
    #[serde(default = "default_bins")]
    pub n_bins: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub corpus_dir: PathBuf,
    #[serde(default = "default_keyframes")]
    pub keyframes: usize,
    #[serde(default)]
    pub encoder: EncoderSpec,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    /// Where pre-training writes checkpoints and the loss log.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            batch_size_pretrain: default_batch_pretrain(),
            iters_pretrain: default_iters_pretrain(),
            batch_size_finetune: 1,
            iters_finetune: default_iters_finetune(),
            image_size: default_image_size(),
            loss_weights: LossWeights::default(),
            n_bins: default_bins(),
            seed: 0,
            corpus_dir: PathBuf::new(),
            keyframes: default_keyframes(),
            encoder: EncoderSpec::default(),
            hidden: default_hidden(),
            output_dir: None,
            checkpoint_every: default_checkpoint_every(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        for (name, v) in [
            ("batch_size_pretrain", self.batch_size_pretrain),
            ("batch_size_finetune", self.batch_size_finetune),
            ("keyframes", self.keyframes),
            ("hidden", self.hidden),
            ("checkpoint_every", self.checkpoint_every),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.image_size < 8 {
            return Err(Error::Config(format!("image_size {} is too small (min 8)", self.image_size)));
        }
        if self.n_bins < 2 {
            return Err(Error::Config(format!("n_bins must be >= 2, got {}", self.n_bins)));
        }
        self.loss_weights.validate()
    }

    /// Reads TOML (`.toml`) or JSON (anything else).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model_config(&self, enc: &PerceptualEncoder) -> ModelConfig {
        ModelConfig {
            widths: enc.widths(),
            hidden: self.hidden,
            image_size: self.image_size,
            encoder: self.encoder.clone(),
        }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32]) {
        assert_eq!(params.len(), self.m.len(), "optimiser size");
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i] as f64;
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= (self.lr * mh / (vh.sqrt() + self.eps)) as f32;
        }
    }
}

/// One row of the loss log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iter: usize,
    pub loss: LossBreakdown,
}

pub const LOSS_CSV_HEADER: &str = "iter,loss_total,loss_style,loss_content,loss_color";

pub fn loss_csv(records: &[LossRecord]) -> String {
    let mut s = String::from(LOSS_CSV_HEADER);
    s.push('\n');
    for r in records {
        writeln!(
            s,
            "{},{},{},{},{}",
            r.iter, r.loss.total, r.loss.style, r.loss.content, r.loss.color
        )
        .unwrap();
    }
    s
}

/// A content/style training example at working resolution with cached
/// encoder outputs.
pub struct PreparedPair<'a> {
    pub content: &'a RgbImage,
    pub content_features: &'a Features,
    pub style_features: &'a Features,
    pub targets: &'a LossTargets,
}

/// Forward + backward for one pair; accumulates weight gradients into
/// `grads` and returns the loss and the predicted parameters.
pub fn accumulate_pair_gradient(
    model: &PredictorModel,
    enc: &PerceptualEncoder,
    pair: &PreparedPair<'_>,
    weights: &LossWeights,
    grads: &mut [f32],
) -> Result<(LossBreakdown, GradingParams)> {
    let trace = model.forward_traced(pair.content_features, pair.style_features);
    let params = trace.params;
    let stylized = apply_params(pair.content, &params);
    let (loss, grad_img) = pair.targets.evaluate_with_grad(enc, &stylized, weights)?;
    let grad_params = apply_params_vjp(pair.content, &params, &grad_img);
    model.backward(pair.content_features, pair.style_features, &trace, &grad_params, grads);
    Ok((loss, params))
}

/// Loss for fixed parameters, and its gradient w.r.t. the seven parameters.
pub fn param_loss_and_grad(
    enc: &PerceptualEncoder,
    content: &RgbImage,
    targets: &LossTargets,
    params: &GradingParams,
    weights: &LossWeights,
) -> Result<(LossBreakdown, [f64; PARAM_COUNT])> {
    let stylized = apply_params(content, params);
    let (loss, grad_img) = targets.evaluate_with_grad(enc, &stylized, weights)?;
    Ok((loss, apply_params_vjp(content, params, &grad_img)))
}

fn check_finite(iter: usize, loss: &LossBreakdown) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss {
            iter,
            total: loss.total,
            style: loss.style,
            content: loss.content,
            color: loss.color,
        })
    }
}

fn mean_loss(losses: &[LossBreakdown]) -> LossBreakdown {
    let n = losses.len() as f64;
    let mut m = LossBreakdown::default();
    for l in losses {
        m.total += l.total / n;
        m.style += l.style / n;
        m.content += l.content / n;
        m.color += l.color / n;
    }
    m
}

struct CorpusEntry {
    image: RgbImage,
    features: Features,
}

pub fn list_corpus(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Config(format!("corpus_dir {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    files.sort();
    Ok(files)
}

#[derive(Debug)]
pub struct PretrainOutcome {
    pub model: PredictorModel,
    pub losses: Vec<LossRecord>,
}

/// Pre-trains a fresh model on random (content, style) pairs from
/// `cfg.corpus_dir`. Reproducible for a fixed seed.
pub fn pretrain(cfg: &TrainConfig) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let files = list_corpus(&cfg.corpus_dir)?;
    if files.len() < 2 {
        return Err(Error::Config(format!(
            "corpus {} needs at least 2 images, found {}",
            cfg.corpus_dir.display(),
            files.len()
        )));
    }
    let enc = PerceptualEncoder::from_spec(&cfg.encoder)?;
    let mut model = PredictorModel::new(cfg.model_config(&enc), cfg.seed);
    let mut opt = Adam::new(model.param_len(), cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));

    let mut cache: HashMap<usize, CorpusEntry> = HashMap::new();
    let mut targets: HashMap<(usize, usize), LossTargets> = HashMap::new();
    let mut losses = Vec::with_capacity(cfg.iters_pretrain);
    if let Some(dir) = &cfg.output_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    for iter in 0..cfg.iters_pretrain {
        let mut grads = vec![0.0f32; model.param_len()];
        let mut batch = Vec::with_capacity(cfg.batch_size_pretrain);
        for _ in 0..cfg.batch_size_pretrain {
            let ci = rng.random_range(0..files.len());
            let mut si = rng.random_range(0..files.len() - 1);
            if si >= ci {
                si += 1;
            }
            for idx in [ci, si] {
                if let std::collections::hash_map::Entry::Vacant(slot) = cache.entry(idx) {
                    let image = prepare(&load_image(&files[idx])?, cfg.image_size);
                    let features = enc.encode(&image);
                    slot.insert(CorpusEntry { image, features });
                }
            }
            let (c, s) = (&cache[&ci], &cache[&si]);
            let t = targets
                .entry((ci, si))
                .or_insert_with(|| LossTargets::from_features(&c.features, s.features.clone(), &s.image, cfg.n_bins));
            let pair = PreparedPair {
                content: &c.image,
                content_features: &c.features,
                style_features: &s.features,
                targets: t,
            };
            let (loss, _) = accumulate_pair_gradient(&model, &enc, &pair, &cfg.loss_weights, &mut grads)?;
            check_finite(iter, &loss)?;
            batch.push(loss);
        }
        let scale = 1.0 / cfg.batch_size_pretrain as f32;
        for g in &mut grads {
            *g *= scale;
        }
        opt.step(model.params_mut(), &grads);
        let record = LossRecord {
            iter,
            loss: mean_loss(&batch),
        };
        log::debug!("pretrain iter {iter}: {:?}", record.loss);
        losses.push(record);

        if let Some(dir) = &cfg.output_dir {
            if (iter + 1) % cfg.checkpoint_every == 0 {
                model.save(dir.join(format!("checkpoint_{:06}.ckpt", iter + 1)))?;
            }
        }
    }
    if let Some(dir) = &cfg.output_dir {
        model.save(dir.join("final.ckpt"))?;
        let log_path = dir.join("loss.csv");
        fs::write(&log_path, loss_csv(&losses)).map_err(|e| Error::io(&log_path, e))?;
    }
    Ok(PretrainOutcome { model, losses })
}

/// Ordered, duplicate-free frame indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyframeSet {
    pub indices: Vec<usize>,
}

impl KeyframeSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Normalised 3 x 32-bin hard histogram.
pub fn hard_histogram(img: &RgbImage) -> Vec<f64> {
    let n = KEYFRAME_HIST_BINS;
    let mut h = vec![0.0f64; 3 * n];
    for px in img.pixels() {
        for (c, &v) in px.iter().enumerate() {
            let bin = ((v.clamp(0.0, 1.0) * n as f32) as usize).min(n - 1);
            h[c * n + bin] += 1.0;
        }
    }
    let total = img.pixel_count() as f64;
    for v in &mut h {
        *v /= total;
    }
    h
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Greedy farthest-point selection under L1 histogram distance, seeded with
/// frame 0; ties go to the lowest index.
pub fn select_keyframes(video: &VideoFrames, k: usize) -> Result<KeyframeSet> {
    if k == 0 || k > video.len() {
        return Err(Error::Contract(format!(
            "keyframe count {k} must be in 1..={}",
            video.len()
        )));
    }
    let hists: Vec<Vec<f64>> = video.frames().iter().map(hard_histogram).collect();
    let mut chosen = vec![false; hists.len()];
    let mut selected = vec![0usize];
    chosen[0] = true;
    let mut nearest: Vec<f64> = hists.iter().map(|h| l1(h, &hists[0])).collect();
    while selected.len() < k {
        let mut best: Option<usize> = None;
        for i in 0..hists.len() {
            if chosen[i] {
                continue;
            }
            if best.is_none_or(|b| nearest[i] > nearest[b]) {
                best = Some(i);
            }
        }
        let b = best.expect("k <= frame count leaves a candidate");
        chosen[b] = true;
        selected.push(b);
        for i in 0..hists.len() {
            nearest[i] = nearest[i].min(l1(&hists[i], &hists[b]));
        }
    }
    selected.sort_unstable();
    Ok(KeyframeSet { indices: selected })
}

#[derive(Debug)]
pub struct FinetuneOutcome {
    pub model: PredictorModel,
    /// One parameter set for the whole video.
    pub params: GradingParams,
    /// `losses[i]` is the loss evaluated before update `i`.
    pub losses: Vec<LossRecord>,
}

/// Mean prediction over the keyframes, clamped to the parameter ranges.
pub fn average_prediction(model: &PredictorModel, content: &[Features], style: &Features) -> GradingParams {
    let mut acc = [0.0f64; PARAM_COUNT];
    for f in content {
        for (a, v) in acc.iter_mut().zip(model.forward(f, style).to_array()) {
            *a += v as f64;
        }
    }
    let n = content.len() as f64;
    GradingParams::from_array(acc.map(|a| (a / n) as f32)).clamped()
}

pub fn finetune(
    model: PredictorModel,
    keyframes: &[RgbImage],
    style: &RgbImage,
    cfg: &TrainConfig,
) -> Result<FinetuneOutcome> {
    finetune_with_progress(model, keyframes, style, cfg, |_| true)
}

/// Test-time fine-tuning: cycles through the keyframes with the same loss
/// and optimiser as pre-training. `progress` sees every loss record and may
/// return `false` to stop early.
pub fn finetune_with_progress(
    mut model: PredictorModel,
    keyframes: &[RgbImage],
    style: &RgbImage,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&LossRecord) -> bool,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    if keyframes.is_empty() {
        return Err(Error::Contract("fine-tuning needs at least one keyframe".into()));
    }
    let enc = PerceptualEncoder::from_spec(&model.config().encoder)?;
    let size = model.config().image_size;
    let style_img = prepare(style, size);
    let style_features = enc.encode(&style_img);
    let frames: Vec<RgbImage> = keyframes.iter().map(|k| prepare(k, size)).collect();
    let content_features: Vec<Features> = frames.iter().map(|f| enc.encode(f)).collect();
    let targets: Vec<LossTargets> = content_features
        .iter()
        .map(|cf| LossTargets::from_features(cf, style_features.clone(), &style_img, cfg.n_bins))
        .collect();

    let mut opt = Adam::new(model.param_len(), cfg.learning_rate);
    let mut losses = Vec::with_capacity(cfg.iters_finetune);
    let mut cursor = 0usize;
    for iter in 0..cfg.iters_finetune {
        let mut grads = vec![0.0f32; model.param_len()];
        let mut batch = Vec::with_capacity(cfg.batch_size_finetune);
        for _ in 0..cfg.batch_size_finetune {
            let k = cursor % frames.len();
            cursor += 1;
            let pair = PreparedPair {
                content: &frames[k],
                content_features: &content_features[k],
                style_features: &style_features,
                targets: &targets[k],
            };
            let (loss, _) = accumulate_pair_gradient(&model, &enc, &pair, &cfg.loss_weights, &mut grads)?;
            check_finite(iter, &loss)?;
            batch.push(loss);
        }
        let scale = 1.0 / cfg.batch_size_finetune as f32;
        for g in &mut grads {
            *g *= scale;
        }
        opt.step(model.params_mut(), &grads);
        let record = LossRecord {
            iter,
            loss: mean_loss(&batch),
        };
        losses.push(record);
        if !progress(&record) {
            break;
        }
    }
    let params = average_prediction(&model, &content_features, &style_features);
    Ok(FinetuneOutcome { model, params, losses })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_validation() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.learning_rate, 1e-4);
        assert_eq!(cfg.batch_size_pretrain, 6);
        assert_eq!(cfg.iters_pretrain, 20_000);
        assert_eq!(cfg.batch_size_finetune, 1);
        assert_eq!(cfg.iters_finetune, 500);
        assert_eq!(cfg.image_size, 256);
        assert!(cfg.validate().is_ok());
        assert!(TrainConfig { learning_rate: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { batch_size_pretrain: 0, ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn config_parses_toml_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.toml");
        fs::write(
            &path,
            "iters_finetune = 20\nseed = 7\n[loss_weights]\nlambda_s = 5.0\nlambda_c = 1.0\nlambda_color = 2.0\n",
        )
        .unwrap();
        let cfg = TrainConfig::load(&path).unwrap();
        assert_eq!(cfg.iters_finetune, 20);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.loss_weights.lambda_color, 2.0);
        assert_eq!(cfg.batch_size_pretrain, 6);
        fs::write(&path, "bogus_key = 1\n").unwrap();
        assert!(TrainConfig::load(&path).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = vec![1.0f32, -2.0, 0.5];
        let mut opt = Adam::new(3, 0.1);
        opt.step(&mut p, &[0.5, -3.0, 0.0]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 1.9).abs() < 1e-6);
        assert_eq!(p[2], 0.5);
    }

    #[test]
    fn csv_header_and_rows() {
        let rows = [LossRecord {
            iter: 3,
            loss: LossBreakdown { total: 1.5, style: 0.1, content: 0.2, color: 0.3 },
        }];
        let text = loss_csv(&rows);
        assert_eq!(text, "iter,loss_total,loss_style,loss_content,loss_color\n3,1.5,0.1,0.2,0.3\n");
    }

    fn solid_video(values: &[f32]) -> VideoFrames {
        VideoFrames::new(values.iter().map(|&v| RgbImage::filled(4, 4, [v; 3])).collect(), 25.0).unwrap()
    }

    #[test]
    fn keyframes_all_frames_and_ties() {
        let v = solid_video(&[0.5; 5]);
        assert_eq!(select_keyframes(&v, 5).unwrap().indices, vec![0, 1, 2, 3, 4]);
        assert_eq!(select_keyframes(&v, 2).unwrap().indices, vec![0, 1]);
        assert!(select_keyframes(&v, 0).is_err());
        assert!(select_keyframes(&v, 6).is_err());
    }

    #[test]
    fn keyframes_cover_both_halves() {
        let v = solid_video(&[0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let k = select_keyframes(&v, 2).unwrap();
        // Exhaustive check of the greedy rule: frame 0 seeds, every white
        // frame is at distance 2 and the lowest index wins.
        assert_eq!(k.indices, vec![0, 5]);
    }

    #[test]
    fn empty_corpus_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            corpus_dir: dir.path().to_path_buf(),
            ..TrainConfig::default()
        };
        assert!(matches!(pretrain(&cfg), Err(Error::Config(_))));
    }
}
