//! Frozen VGG-19-topology feature extractor tapped at relu1_1, relu2_1,
//! relu3_1 and relu4_1.
//!
//! Weights come either from a torchvision-layout safetensors file
//! (`features.{0,2,5,7,10,12,14,16,19}.{weight,bias}`) or from a seeded
//! He initialisation at reduced widths. Either way they never change after
//! construction.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::RgbImage;
use crate::nn::{max_pool2, max_pool2_backward, relu, relu_backward, Conv3x3, FeatureMap, FeatureMapShape};

pub const TAP_COUNT: usize = 4;

/// ImageNet channel statistics used by torchvision VGG weights.
pub const INPUT_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const INPUT_STD: [f32; 3] = [0.229, 0.224, 0.225];

pub const VGG19_WIDTHS: [usize; TAP_COUNT] = [64, 128, 256, 512];
pub const DESK_WIDTHS: [usize; TAP_COUNT] = [8, 16, 32, 64];

/// torchvision `features.N` indices of the convolutions we use.
const VGG19_CONV_INDICES: [usize; 9] = [0, 2, 5, 7, 10, 12, 14, 16, 19];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderSpec {
    /// Frozen random features with the VGG-19 layout at the given widths.
    Seeded { widths: [usize; TAP_COUNT], seed: u64 },
    /// Pretrained VGG-19 weights in torchvision layout.
    Vgg19 { weights: PathBuf },
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec::Seeded {
            widths: DESK_WIDTHS,
            seed: 0x5eed,
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Conv(usize),
    Relu,
    Pool,
    Tap(usize),
}

const PLAN: [Op; 22] = [
    Op::Conv(0),
    Op::Relu,
    Op::Tap(0),
    Op::Conv(1),
    Op::Relu,
    Op::Pool,
    Op::Conv(2),
    Op::Relu,
    Op::Tap(1),
    Op::Conv(3),
    Op::Relu,
    Op::Pool,
    Op::Conv(4),
    Op::Relu,
    Op::Tap(2),
    Op::Conv(5),
    Op::Relu,
    Op::Conv(6),
    Op::Relu,
    Op::Conv(7),
    Op::Relu,
    Op::Pool,
];
const PLAN_TAIL: [Op; 3] = [Op::Conv(8), Op::Relu, Op::Tap(3)];

fn plan() -> impl Iterator<Item = Op> {
    PLAN.into_iter().chain(PLAN_TAIL)
}

/// Feature maps at the four taps, shallowest first.
pub type Features = [FeatureMap; TAP_COUNT];

#[derive(Clone, Debug)]
pub struct PerceptualEncoder {
    widths: [usize; TAP_COUNT],
    convs: Vec<Conv3x3>,
    weights: Arc<Vec<f32>>,
}

/// Intermediate values kept by [`PerceptualEncoder::forward_traced`] for the
/// input-gradient pass.
pub struct EncoderTrace {
    inputs: Vec<FeatureMap>,
    relu_outputs: Vec<FeatureMap>,
    pool_args: Vec<(FeatureMapShape, Vec<u32>)>,
    taps: Features,
}

impl EncoderTrace {
    pub fn features(&self) -> &Features {
        &self.taps
    }
}

fn layer_channels(widths: [usize; TAP_COUNT]) -> [(usize, usize); 9] {
    let [c1, c2, c3, c4] = widths;
    [
        (3, c1),
        (c1, c1),
        (c1, c2),
        (c2, c2),
        (c2, c3),
        (c3, c3),
        (c3, c3),
        (c3, c3),
        (c3, c4),
    ]
}

impl PerceptualEncoder {
    pub fn from_spec(spec: &EncoderSpec) -> Result<Self> {
        match spec {
            EncoderSpec::Seeded { widths, seed } => Ok(Self::seeded(*widths, *seed)),
            EncoderSpec::Vgg19 { weights } => Self::load_vgg19(weights),
        }
    }

    pub fn seeded(widths: [usize; TAP_COUNT], seed: u64) -> Self {
        let mut weights = Vec::new();
        let convs: Vec<_> = layer_channels(widths)
            .iter()
            .map(|&(i, o)| Conv3x3::allocate(&mut weights, i, o))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for conv in &convs {
            conv.init_he(&mut weights, &mut rng, 1.0);
        }
        Self {
            widths,
            convs,
            weights: Arc::new(weights),
        }
    }

    pub fn load_vgg19(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let tensors = safetensors::SafeTensors::deserialize(&bytes)
            .map_err(|e| Error::Model(format!("{}: {e}", path.display())))?;
        let mut weights = Vec::new();
        let convs: Vec<_> = layer_channels(VGG19_WIDTHS)
            .iter()
            .map(|&(i, o)| Conv3x3::allocate(&mut weights, i, o))
            .collect();
        for (conv, idx) in convs.iter().zip(VGG19_CONV_INDICES) {
            for (suffix, offset, len) in [
                ("weight", conv.weight_offset, conv.weight_len()),
                ("bias", conv.bias_offset, conv.out_ch),
            ] {
                let name = format!("features.{idx}.{suffix}");
                let view = tensors
                    .tensor(&name)
                    .map_err(|e| Error::Model(format!("missing {name}: {e}")))?;
                if view.dtype() != safetensors::Dtype::F32 {
                    return Err(Error::Model(format!("{name}: expected f32, got {:?}", view.dtype())));
                }
                let data = view.data();
                if data.len() != len * 4 {
                    return Err(Error::Model(format!(
                        "{name}: expected {len} values, got {}",
                        data.len() / 4
                    )));
                }
                for (dst, chunk) in weights[offset..offset + len].iter_mut().zip(data.chunks_exact(4)) {
                    *dst = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
                }
            }
        }
        Ok(Self {
            widths: VGG19_WIDTHS,
            convs,
            weights: Arc::new(weights),
        })
    }

    pub fn widths(&self) -> [usize; TAP_COUNT] {
        self.widths
    }

    /// Channel-normalised CHW tensor for the backbone.
    pub fn normalize(img: &RgbImage) -> FeatureMap {
        let (w, h) = (img.width(), img.height());
        let mut out = FeatureMap::zeros(3, h, w);
        for (i, px) in img.pixels().enumerate() {
            for c in 0..3 {
                out.data[c * w * h + i] = (px[c] - INPUT_MEAN[c]) / INPUT_STD[c];
            }
        }
        out
    }

    pub fn encode(&self, img: &RgbImage) -> Features {
        let mut x = Self::normalize(img);
        let mut taps: [Option<FeatureMap>; TAP_COUNT] = Default::default();
        for op in plan() {
            x = match op {
                Op::Conv(i) => self.convs[i].forward(&self.weights, &x),
                Op::Relu => relu(&x),
                Op::Pool => max_pool2(&x).0,
                Op::Tap(j) => {
                    taps[j] = Some(x.clone());
                    x
                }
            };
        }
        taps.map(|t| t.expect("every tap visited"))
    }

    pub fn forward_traced(&self, img: &RgbImage) -> EncoderTrace {
        let mut x = Self::normalize(img);
        let mut inputs = Vec::new();
        let mut relu_outputs = Vec::new();
        let mut pool_args = Vec::new();
        let mut taps: [Option<FeatureMap>; TAP_COUNT] = Default::default();
        for op in plan() {
            x = match op {
                Op::Conv(i) => {
                    let y = self.convs[i].forward(&self.weights, &x);
                    inputs.push(x);
                    y
                }
                Op::Relu => {
                    let y = relu(&x);
                    relu_outputs.push(y.clone());
                    y
                }
                Op::Pool => {
                    let shape = x.shape();
                    let (y, arg) = max_pool2(&x);
                    pool_args.push((shape, arg));
                    y
                }
                Op::Tap(j) => {
                    taps[j] = Some(x.clone());
                    x
                }
            };
        }
        EncoderTrace {
            inputs,
            relu_outputs,
            pool_args,
            taps: taps.map(|t| t.expect("every tap visited")),
        }
    }

    /// Gradient with respect to the input image's `[0,1]` pixels (interleaved
    /// RGB) given gradients at each tap.
    pub fn backward_input(&self, trace: &EncoderTrace, tap_grads: &Features) -> Vec<f32> {
        let last = &trace.taps[TAP_COUNT - 1];
        let mut g = FeatureMap::zeros(last.channels, last.height, last.width);
        let mut conv_i = trace.inputs.len();
        let mut pool_i = trace.pool_args.len();
        let mut relu_i = trace.relu_outputs.len();
        let ops: Vec<Op> = plan().collect();
        for op in ops.into_iter().rev() {
            match op {
                Op::Tap(j) => {
                    for (a, b) in g.data.iter_mut().zip(&tap_grads[j].data) {
                        *a += b;
                    }
                }
                Op::Pool => {
                    pool_i -= 1;
                    let (shape, arg) = &trace.pool_args[pool_i];
                    g = max_pool2_backward(*shape, arg, &g);
                }
                Op::Relu => {
                    relu_i -= 1;
                    g = relu_backward(&trace.relu_outputs[relu_i], &g);
                }
                Op::Conv(i) => {
                    conv_i -= 1;
                    g = self.convs[i]
                        .backward(&self.weights, &trace.inputs[conv_i], &g, None, true)
                        .expect("input gradient requested");
                }
            }
        }
        let (h, w) = (g.height, g.width);
        let mut out = vec![0.0f32; 3 * h * w];
        for c in 0..3 {
            for (i, &v) in g.channel(c).iter().enumerate() {
                out[i * 3 + c] = v / INPUT_STD[c];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    #[test]
    fn tap_shapes_follow_stride_schedule() {
        let enc = PerceptualEncoder::seeded([4, 8, 8, 16], 1);
        let feats = enc.encode(&RgbImage::filled(256, 256, [0.0; 3]));
        let shapes: Vec<_> = feats.iter().map(|f| (f.channels, f.height, f.width)).collect();
        assert_eq!(shapes, vec![(4, 256, 256), (8, 128, 128), (8, 64, 64), (16, 32, 32)]);
        assert!(feats.iter().all(FeatureMap::is_finite));
    }

    #[test]
    fn deterministic() {
        let enc = PerceptualEncoder::seeded([4, 4, 8, 8], 2);
        let img = random_image(32, 32, 3);
        assert_eq!(enc.encode(&img), enc.encode(&img));
        assert_eq!(enc.encode(&img), enc.forward_traced(&img).taps);
    }

    #[test]
    fn missing_weights_is_a_model_error() {
        let err = PerceptualEncoder::from_spec(&EncoderSpec::Vgg19 {
            weights: "/nonexistent/vgg19.safetensors".into(),
        })
        .unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let enc = PerceptualEncoder::seeded([3, 4, 4, 6], 5);
        let img = random_image(16, 16, 6);
        let trace = enc.forward_traced(&img);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let probes: Features = trace.taps.clone().map(|f| {
            let data = (0..f.data.len()).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            FeatureMap::from_data(f.channels, f.height, f.width, data)
        });
        let loss = |img: &RgbImage| -> f64 {
            enc.encode(img)
                .iter()
                .zip(&probes)
                .map(|(f, p)| f.data.iter().zip(&p.data).map(|(a, b)| (*a as f64) * (*b as f64)).sum::<f64>())
                .sum()
        };
        let grad = enc.backward_input(&trace, &probes);
        let h = 1e-3f32;
        for idx in [0usize, 100, 301, 767] {
            let mut hi = img.clone();
            hi.data_mut()[idx] += h;
            let mut lo = img.clone();
            lo.data_mut()[idx] -= h;
            let fd = (loss(&hi) - loss(&lo)) / (2.0 * h as f64);
            let a = grad[idx] as f64;
            assert!((fd - a).abs() <= 2e-2 * fd.abs().max(a.abs()).max(1.0), "pixel {idx}: fd {fd} vs {a}");
        }
    }
}
