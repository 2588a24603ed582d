//! Parameter-generation network: (content, style) -> `GradingParams`.
//!
//! Per tap `j`, content and style features each pass through their own
//! `conv3x3 -> relu -> conv3x3` block. The two are fused with AdaIN, and
//! both the fused map and the content-path map are average-pooled to one
//! value per channel. The pooled vectors of all four taps are concatenated
//! and fed to `linear -> relu -> linear(7)`; the last layer starts at zero,
//! so a fresh model predicts the identity grade.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::color_ops::{GradingParams, ParamRange, PARAM_COUNT, PARAM_RANGES};
use crate::encoder::{EncoderSpec, Features, PerceptualEncoder, TAP_COUNT};
use crate::error::{Error, Result};
use crate::imaging::{resize, RgbImage};
use crate::nn::{
    adain, adain_backward, avg_pool, avg_pool_backward, relu, relu_backward, Conv3x3, FeatureMap, Linear,
};

pub const DEFAULT_IMAGE_SIZE: usize = 256;
pub const DEFAULT_HIDDEN: usize = 128;

const CHECKPOINT_MAGIC: &[u8; 4] = b"PGCK";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub widths: [usize; TAP_COUNT],
    pub hidden: usize,
    pub image_size: usize,
    pub encoder: EncoderSpec,
}

impl ModelConfig {
    pub fn for_encoder(spec: EncoderSpec, widths: [usize; TAP_COUNT]) -> Self {
        Self {
            widths,
            hidden: DEFAULT_HIDDEN,
            image_size: DEFAULT_IMAGE_SIZE,
            encoder: spec,
        }
    }
}

/// Maps an unbounded head output onto a parameter range with `tanh`, scaled
/// separately above and below the identity value so that `z = 0` gives the
/// identity and every representable output stays inside the range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Squash {
    pub range: ParamRange,
}

impl Squash {
    fn scale(&self, z: f32) -> f32 {
        if z >= 0.0 {
            self.range.max - self.range.identity
        } else {
            self.range.identity - self.range.min
        }
    }

    pub fn apply(&self, z: f32) -> f32 {
        (self.range.identity + self.scale(z) * z.tanh()).clamp(self.range.min, self.range.max)
    }

    pub fn derivative(&self, z: f32) -> f32 {
        let t = z.tanh();
        self.scale(z) * (1.0 - t * t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ScaleBlocks {
    content_a: Conv3x3,
    content_b: Conv3x3,
    style_a: Conv3x3,
    style_b: Conv3x3,
}

#[derive(Clone, Debug)]
pub struct PredictorModel {
    config: ModelConfig,
    squash: [Squash; PARAM_COUNT],
    blocks: Vec<ScaleBlocks>,
    hidden: Linear,
    head: Linear,
    params: Vec<f32>,
}

struct ScaleTrace {
    content_a: FeatureMap,
    content_b: FeatureMap,
    style_a: FeatureMap,
    style_b: FeatureMap,
}

/// Forward intermediates needed by [`PredictorModel::backward`].
pub struct PredictorTrace {
    scales: Vec<ScaleTrace>,
    pooled: Vec<f32>,
    hidden_out: Vec<f32>,
    raw: [f32; PARAM_COUNT],
    pub params: GradingParams,
}

impl PredictorModel {
    /// Fresh model: He-initialised conv blocks and hidden layer, zero head.
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut params = Vec::new();
        let blocks: Vec<_> = config
            .widths
            .iter()
            .map(|&c| ScaleBlocks {
                content_a: Conv3x3::allocate(&mut params, c, c),
                content_b: Conv3x3::allocate(&mut params, c, c),
                style_a: Conv3x3::allocate(&mut params, c, c),
                style_b: Conv3x3::allocate(&mut params, c, c),
            })
            .collect();
        let pooled_dim = 2 * config.widths.iter().sum::<usize>();
        let hidden = Linear::allocate(&mut params, pooled_dim, config.hidden);
        let head = Linear::allocate(&mut params, config.hidden, PARAM_COUNT);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for b in &blocks {
            for conv in [b.content_a, b.content_b, b.style_a, b.style_b] {
                conv.init_he(&mut params, &mut rng, 1.0);
            }
        }
        hidden.init_he(&mut params, &mut rng, 1.0);
        head.zero(&mut params);

        Self {
            config,
            squash: PARAM_RANGES.map(|range| Squash { range }),
            blocks,
            hidden,
            head,
            params,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn param_len(&self) -> usize {
        self.params.len()
    }

    /// Index range of the head (last linear layer) inside the flat weights.
    pub fn head_range(&self) -> std::ops::Range<usize> {
        self.head.weight_offset..self.head.bias_offset + self.head.out_dim
    }

    pub fn squash(&self) -> &[Squash; PARAM_COUNT] {
        &self.squash
    }

    pub fn forward_traced(&self, content: &Features, style: &Features) -> PredictorTrace {
        let p = &self.params;
        let mut scales = Vec::with_capacity(TAP_COUNT);
        let mut pooled = Vec::new();
        for (b, (fc, fs)) in self.blocks.iter().zip(content.iter().zip(style)) {
            let content_a = relu(&b.content_a.forward(p, fc));
            let content_b = b.content_b.forward(p, &content_a);
            let style_a = relu(&b.style_a.forward(p, fs));
            let style_b = b.style_b.forward(p, &style_a);
            let fused = adain(&content_b, &style_b);
            pooled.extend(avg_pool(&fused));
            pooled.extend(avg_pool(&content_b));
            scales.push(ScaleTrace {
                content_a,
                content_b,
                style_a,
                style_b,
            });
        }
        let hidden_out: Vec<f32> = self.hidden.forward(p, &pooled).into_iter().map(|v| v.max(0.0)).collect();
        let raw: [f32; PARAM_COUNT] = self.head.forward(p, &hidden_out).try_into().expect("seven outputs");
        let mut values = [0.0f32; PARAM_COUNT];
        for k in 0..PARAM_COUNT {
            values[k] = self.squash[k].apply(raw[k]);
        }
        PredictorTrace {
            scales,
            pooled,
            hidden_out,
            raw,
            params: GradingParams::from_array(values),
        }
    }

    pub fn forward(&self, content: &Features, style: &Features) -> GradingParams {
        self.forward_traced(content, style).params
    }

    /// Accumulates `dL/dweights` into `grads` given `dL/dparams`.
    pub fn backward(
        &self,
        content: &Features,
        style: &Features,
        trace: &PredictorTrace,
        grad_params: &[f64; PARAM_COUNT],
        grads: &mut [f32],
    ) {
        assert_eq!(grads.len(), self.params.len(), "gradient buffer size");
        let p = &self.params;
        let mut graw = [0.0f32; PARAM_COUNT];
        for k in 0..PARAM_COUNT {
            graw[k] = (grad_params[k] * self.squash[k].derivative(trace.raw[k]) as f64) as f32;
        }
        let ghidden = self.head.backward(p, &trace.hidden_out, &graw, grads);
        let ghidden: Vec<f32> = ghidden
            .iter()
            .zip(&trace.hidden_out)
            .map(|(&g, &h)| if h > 0.0 { g } else { 0.0 })
            .collect();
        let gpooled = self.hidden.backward(p, &trace.pooled, &ghidden, grads);

        let mut offset = 0;
        for ((b, t), (fc, fs)) in self.blocks.iter().zip(&trace.scales).zip(content.iter().zip(style)) {
            let c = t.content_b.channels;
            let gfused_pool = &gpooled[offset..offset + c];
            let gcontent_pool = &gpooled[offset + c..offset + 2 * c];
            offset += 2 * c;
            if gfused_pool.iter().chain(gcontent_pool).all(|&g| g == 0.0) {
                continue;
            }
            let gfused = avg_pool_backward(t.content_b.shape(), gfused_pool);
            let (mut gcb, gsb) = adain_backward(&t.content_b, &t.style_b, &gfused);
            let gpool_c = avg_pool_backward(t.content_b.shape(), gcontent_pool);
            for (a, b) in gcb.data.iter_mut().zip(&gpool_c.data) {
                *a += b;
            }

            let gca = b
                .content_b
                .backward(p, &t.content_a, &gcb, Some(grads), true)
                .expect("input gradient");
            let gca = relu_backward(&t.content_a, &gca);
            b.content_a.backward(p, fc, &gca, Some(grads), false);

            let gsa = b
                .style_b
                .backward(p, &t.style_a, &gsb, Some(grads), true)
                .expect("input gradient");
            let gsa = relu_backward(&t.style_a, &gsa);
            b.style_a.backward(p, fs, &gsa, Some(grads), false);
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let header = CheckpointHeader {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            squash: self.squash.to_vec(),
            param_count: self.params.len(),
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(8 + header.len() + self.params.len() * 4);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.params {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let bad = |msg: &str| Error::Model(format!("{}: {msg}", path.display()));
        if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let header_len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let body = bytes.get(8..8 + header_len).ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(body)?;
        if header.version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {}", header.version)));
        }
        let mut model = Self::new(header.config, 0);
        if header.param_count != model.params.len() || header.squash.len() != PARAM_COUNT {
            return Err(bad("weight count does not match the architecture"));
        }
        let data = &bytes[8 + header_len..];
        if data.len() != header.param_count * 4 {
            return Err(bad("truncated weights"));
        }
        for (dst, chunk) in model.params.iter_mut().zip(data.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
        model.squash.copy_from_slice(&header.squash);
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    config: ModelConfig,
    squash: Vec<Squash>,
    param_count: usize,
}

/// Resizes to the model's working resolution.
pub fn prepare(img: &RgbImage, size: usize) -> RgbImage {
    resize(img, size, size)
}

/// Full prediction path: downscale, encode, fuse, pool, head, squash.
pub fn predict_params(
    model: &PredictorModel,
    enc: &PerceptualEncoder,
    content: &RgbImage,
    style: &RgbImage,
) -> GradingParams {
    let size = model.config.image_size;
    let fc = enc.encode(&prepare(content, size));
    let fs = enc.encode(&prepare(style, size));
    model.forward(&fc, &fs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    const WIDTHS: [usize; 4] = [3, 4, 4, 6];

    fn small_config() -> ModelConfig {
        ModelConfig {
            widths: WIDTHS,
            hidden: 16,
            image_size: 32,
            encoder: EncoderSpec::Seeded { widths: WIDTHS, seed: 1 },
        }
    }

    fn random_image(w: usize, h: usize, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    #[test]
    fn squash_is_identity_at_zero_and_bounded() {
        for s in PARAM_RANGES.map(|range| Squash { range }) {
            assert_eq!(s.apply(0.0), s.range.identity);
            for z in [-1e6f32, -3.0, -0.1, 0.1, 3.0, 1e6] {
                let v = s.apply(z);
                assert!(v >= s.range.min && v <= s.range.max);
            }
        }
        // sharpness can still move upwards from its lower-bound identity
        let sharp = Squash { range: PARAM_RANGES[5] };
        assert!(sharp.apply(0.5) > 0.0);
        assert!(sharp.derivative(0.0) > 0.0);
    }

    #[test]
    fn fresh_model_predicts_identity() {
        let model = PredictorModel::new(small_config(), 3);
        let enc = PerceptualEncoder::seeded(WIDTHS, 1);
        for seed in 0..3 {
            let p = predict_params(&model, &enc, &random_image(40, 24, seed), &random_image(20, 30, seed + 100));
            assert_eq!(p, GradingParams::IDENTITY);
        }
    }

    #[test]
    fn prediction_is_deterministic_and_in_range_under_large_weights() {
        let enc = PerceptualEncoder::seeded(WIDTHS, 1);
        let content = random_image(32, 32, 1);
        let style = random_image(32, 32, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let mut model = PredictorModel::new(small_config(), rng.random());
            for w in model.params_mut() {
                *w = rng.random_range(-10.0..10.0);
            }
            let a = predict_params(&model, &enc, &content, &style);
            assert!(a.is_in_range(), "{a:?}");
            assert_eq!(a, predict_params(&model, &enc, &content, &style));
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let enc = PerceptualEncoder::seeded(WIDTHS, 1);
        let mut model = PredictorModel::new(small_config(), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // give the head non-zero weights so gradients reach every layer
        let head = model.head_range();
        for w in &mut model.params_mut()[head] {
            *w = rng.random_range(-0.3..0.3);
        }
        let fc = enc.encode(&random_image(16, 16, 6));
        let fs = enc.encode(&random_image(16, 16, 7));
        let probe = [0.3f64, -1.0, 0.5, 0.8, -0.2, 0.4, 1.1];
        let scalar = |m: &PredictorModel| -> f64 {
            m.forward(&fc, &fs).to_array().iter().zip(&probe).map(|(a, b)| *a as f64 * b).sum()
        };
        let trace = model.forward_traced(&fc, &fs);
        let mut grads = vec![0.0f32; model.param_len()];
        model.backward(&fc, &fs, &trace, &probe, &mut grads);

        let n = model.param_len();
        let picks = [0usize, 17, 200, n / 3, n / 2, n - 200, n - 9, n - 1];
        let mut checked = 0;
        for &i in &picks {
            let h = 1e-2f32;
            let mut hi = model.clone();
            hi.params_mut()[i] += h;
            let mut lo = model.clone();
            lo.params_mut()[i] -= h;
            let fd = (scalar(&hi) - scalar(&lo)) / (2.0 * h as f64);
            let a = grads[i] as f64;
            assert!((fd - a).abs() <= 5e-2 * fd.abs().max(a.abs()).max(1e-3), "weight {i}: fd {fd} vs {a}");
            if a.abs() > 1e-6 {
                checked += 1;
            }
        }
        assert!(checked >= 4, "too few non-zero gradients checked");
    }

    #[test]
    fn head_gradient_is_nonzero_at_init() {
        let enc = PerceptualEncoder::seeded(WIDTHS, 1);
        let model = PredictorModel::new(small_config(), 4);
        let fc = enc.encode(&random_image(16, 16, 6));
        let fs = enc.encode(&random_image(16, 16, 7));
        let trace = model.forward_traced(&fc, &fs);
        let mut grads = vec![0.0f32; model.param_len()];
        model.backward(&fc, &fs, &trace, &[1.0; PARAM_COUNT], &mut grads);
        assert!(grads[model.head_range()].iter().any(|g| g.abs() > 0.0));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut model = PredictorModel::new(small_config(), 8);
        model.params_mut()[5] = 0.123;
        let path = dir.path().join("m.ckpt");
        model.save(&path).unwrap();
        let back = PredictorModel::load(&path).unwrap();
        assert_eq!(back.params(), model.params());
        assert_eq!(back.config(), model.config());
        fs::write(&path, b"garbage").unwrap();
        assert!(matches!(PredictorModel::load(&path), Err(Error::Model(_))));
    }
}
