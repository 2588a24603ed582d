//! End-to-end retouching: keyframes, fine-tuning, overrides, grading,
//! baking, plus the HTTP preview service.

#[cfg(feature = "cli")]
pub mod server;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::color_ops::{grade_video, GradingParams, PARAM_COUNT, PARAM_NAMES};
use crate::encoder::PerceptualEncoder;
use crate::error::{Error, Result};
use crate::imaging::{load_image, read_frames, write_frames, RgbImage, VideoFrames};
use crate::lut::{bake_lut, write_cube, DEFAULT_LUT_SIZE};
use crate::predictor::{prepare, PredictorModel};
use crate::training::{average_prediction, finetune, select_keyframes, TrainConfig};

pub const PARAMS_FILE: &str = "params.json";
pub const CUBE_FILE: &str = "grade.cube";
pub const REPORT_FILE: &str = "report.json";
pub const FRAMES_DIR: &str = "frames";

/// Per-parameter manual values that replace the predicted ones.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamOverrides(pub [Option<f32>; PARAM_COUNT]);

impl ParamOverrides {
    pub fn set(&mut self, name: &str, value: f32) -> Result<()> {
        let i = PARAM_NAMES
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| Error::Contract(format!("unknown grading parameter `{name}`")))?;
        self.0[i] = Some(value);
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(Option::is_none)
    }

    /// Replaces the overridden entries; the result must be in range.
    pub fn apply(&self, p: &GradingParams) -> Result<GradingParams> {
        let mut v = p.to_array();
        for (x, o) in v.iter_mut().zip(self.0) {
            if let Some(o) = o {
                *x = o;
            }
        }
        let out = GradingParams::from_array(v);
        out.validate()?;
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct RetouchOptions {
    /// Frame directory, or a single image treated as a one-frame video.
    pub content: PathBuf,
    pub style: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub output: PathBuf,
    pub finetune: bool,
    pub lut_size: usize,
    pub overrides: ParamOverrides,
}

impl RetouchOptions {
    pub fn new(content: impl Into<PathBuf>, style: impl Into<PathBuf>, output: impl Into<PathBuf>) -> Self {
        Self {
            content: content.into(),
            style: style.into(),
            checkpoint: None,
            config: None,
            output: output.into(),
            finetune: true,
            lut_size: DEFAULT_LUT_SIZE,
            overrides: ParamOverrides::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub total_ms: f64,
    pub ms_per_frame: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetouchReport {
    pub frame_count: usize,
    pub frame_rate: f32,
    pub keyframes: Vec<usize>,
    pub finetune_iters: usize,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub predicted: GradingParams,
    pub effective: GradingParams,
    pub lut_size: usize,
    pub timings: Vec<StageTiming>,
}

struct Stopwatch {
    frames: usize,
    timings: Vec<StageTiming>,
}

impl Stopwatch {
    fn run<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().map_err(|e| e.in_stage(stage))?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        log::info!("{stage}: {ms:.1} ms");
        self.timings.push(StageTiming {
            stage: stage.into(),
            total_ms: ms,
            ms_per_frame: ms / self.frames.max(1) as f64,
        });
        Ok(out)
    }
}

pub fn load_video(path: &Path) -> Result<VideoFrames> {
    if path.is_dir() {
        read_frames(path)
    } else {
        VideoFrames::new(vec![load_image(path)?], crate::imaging::DEFAULT_FRAME_RATE)
    }
}

/// A pretrained model from `checkpoint`, or a freshly initialised one
/// (which predicts the identity grade) when no checkpoint is given.
pub fn load_model(checkpoint: Option<&Path>, cfg: &TrainConfig) -> Result<PredictorModel> {
    match checkpoint {
        Some(path) => PredictorModel::load(path),
        None => {
            let enc = PerceptualEncoder::from_spec(&cfg.encoder)?;
            Ok(PredictorModel::new(cfg.model_config(&enc), cfg.seed))
        }
    }
}

pub fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::load(p),
        None => Ok(TrainConfig::default()),
    }
}

/// Mean prediction over `keyframes` without any training.
pub fn predict_video_params(model: &PredictorModel, keyframes: &[RgbImage], style: &RgbImage) -> Result<GradingParams> {
    let enc = PerceptualEncoder::from_spec(&model.config().encoder)?;
    let size = model.config().image_size;
    let style_features = enc.encode(&prepare(style, size));
    let content: Vec<_> = keyframes.iter().map(|k| enc.encode(&prepare(k, size))).collect();
    Ok(average_prediction(model, &content, &style_features))
}

/// Runs the whole retouch flow and writes `frames/`, `params.json`,
/// `grade.cube` and `report.json` under `opts.output`.
pub fn retouch(opts: &RetouchOptions) -> Result<RetouchReport> {
    let cfg = load_config(opts.config.as_deref()).map_err(|e| e.in_stage("config"))?;
    let video = load_video(&opts.content).map_err(|e| e.in_stage("load content"))?;
    let mut sw = Stopwatch {
        frames: video.len(),
        timings: Vec::new(),
    };
    let style = sw.run("load style", || load_image(&opts.style))?;
    let model = sw.run("model", || load_model(opts.checkpoint.as_deref(), &cfg))?;
    let keys = sw.run("keyframes", || select_keyframes(&video, cfg.keyframes.min(video.len())))?;
    let keyframes: Vec<RgbImage> = keys.indices.iter().map(|&i| video.frames()[i].clone()).collect();

    let (predicted, iters, initial_loss, final_loss) = if opts.finetune {
        let out = sw.run("finetune", || finetune(model, &keyframes, &style, &cfg))?;
        (
            out.params,
            out.losses.len(),
            out.losses.first().map(|r| r.loss.total),
            out.losses.last().map(|r| r.loss.total),
        )
    } else {
        let p = sw.run("predict", || predict_video_params(&model, &keyframes, &style))?;
        (p, 0, None, None)
    };
    let effective = opts.overrides.apply(&predicted).map_err(|e| e.in_stage("overrides"))?;

    let graded = sw.run("grade", || Ok(grade_video(&video, &effective)))?;
    let out = &opts.output;
    sw.run("write frames", || write_frames(&graded, out.join(FRAMES_DIR)))?;
    sw.run("bake", || {
        let lut = bake_lut(&effective, opts.lut_size)?;
        write_cube(&lut, out.join(CUBE_FILE), "paramgrade")
    })?;

    let report = RetouchReport {
        frame_count: video.len(),
        frame_rate: video.frame_rate(),
        keyframes: keys.indices,
        finetune_iters: iters,
        initial_loss,
        final_loss,
        predicted,
        effective,
        lut_size: opts.lut_size,
        timings: sw.timings,
    };
    let write = |name: &str, text: String| {
        let path = out.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e).in_stage("write"))
    };
    write(PARAMS_FILE, effective.to_json())?;
    write(REPORT_FILE, serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}
