//! The seven parametric grading operators and their fixed composition.
//!
//! Pointwise chain, applied per pixel in this order:
//!
//! ```text
//! temperature -> brightness -> contrast -> clamp -> gamma -> hue -> saturation -> clamp
//! ```
//!
//! followed by the spatial unsharp mask (`sharpness`) on the whole image.
//! Every operator has an exact identity setting, and the identity path is
//! bit-exact: no rounding is introduced when all parameters sit at identity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{luma, RgbImage, VideoFrames, LUMA_WEIGHTS};

pub const PARAM_COUNT: usize = 7;

pub const PARAM_NAMES: [&str; PARAM_COUNT] = [
    "brightness",
    "contrast",
    "gamma",
    "hue",
    "saturation",
    "sharpness",
    "temperature",
];

/// Temperature shifts red up and blue down by this much per unit.
const TEMPERATURE_GAIN: f32 = 0.3;
const GAMMA_FLOOR: f32 = 1e-6;

/// Inclusive range and identity value of one grading parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRange {
    pub min: f32,
    pub max: f32,
    pub identity: f32,
}

pub const PARAM_RANGES: [ParamRange; PARAM_COUNT] = [
    ParamRange { min: -0.5, max: 0.5, identity: 0.0 },
    ParamRange { min: 0.5, max: 2.0, identity: 1.0 },
    ParamRange { min: 0.33, max: 3.0, identity: 1.0 },
    ParamRange { min: -std::f32::consts::FRAC_PI_4, max: std::f32::consts::FRAC_PI_4, identity: 0.0 },
    ParamRange { min: 0.0, max: 2.0, identity: 1.0 },
    ParamRange { min: 0.0, max: 2.0, identity: 0.0 },
    ParamRange { min: -0.5, max: 0.5, identity: 0.0 },
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradingParams {
    pub brightness: f32,
    pub contrast: f32,
    pub gamma: f32,
    /// Rotation about the grey axis, radians.
    pub hue: f32,
    pub saturation: f32,
    pub sharpness: f32,
    pub temperature: f32,
}

impl Default for GradingParams {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl GradingParams {
    pub const IDENTITY: GradingParams = GradingParams {
        brightness: 0.0,
        contrast: 1.0,
        gamma: 1.0,
        hue: 0.0,
        saturation: 1.0,
        sharpness: 0.0,
        temperature: 0.0,
    };

    /// Values in `PARAM_NAMES` order.
    pub fn to_array(&self) -> [f32; PARAM_COUNT] {
        [
            self.brightness,
            self.contrast,
            self.gamma,
            self.hue,
            self.saturation,
            self.sharpness,
            self.temperature,
        ]
    }

    pub fn from_array(v: [f32; PARAM_COUNT]) -> Self {
        Self {
            brightness: v[0],
            contrast: v[1],
            gamma: v[2],
            hue: v[3],
            saturation: v[4],
            sharpness: v[5],
            temperature: v[6],
        }
    }

    pub fn get(&self, name: &str) -> Option<f32> {
        PARAM_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| self.to_array()[i])
    }

    pub fn set(&mut self, name: &str, value: f32) -> Result<()> {
        let i = PARAM_NAMES
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| Error::Contract(format!("unknown grading parameter `{name}`")))?;
        let mut v = self.to_array();
        v[i] = value;
        *self = Self::from_array(v);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for ((name, range), v) in PARAM_NAMES.iter().zip(PARAM_RANGES).zip(self.to_array()) {
            if !v.is_finite() || v < range.min || v > range.max {
                return Err(Error::Contract(format!(
                    "{name}={v} outside [{}, {}]",
                    range.min, range.max
                )));
            }
        }
        Ok(())
    }

    pub fn is_in_range(&self) -> bool {
        self.validate().is_ok()
    }

    pub fn clamped(&self) -> Self {
        let mut v = self.to_array();
        for (x, r) in v.iter_mut().zip(PARAM_RANGES) {
            *x = x.clamp(r.min, r.max);
        }
        Self::from_array(v)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct serialises")
    }
}

#[inline]
fn contrast(v: f32, c: f32) -> f32 {
    v * c + 0.5 * (1.0 - c)
}

#[inline]
fn gamma(v: f32, g: f32) -> f32 {
    if g == 1.0 {
        v
    } else {
        (g * v.max(GAMMA_FLOOR).ln()).exp()
    }
}

/// Axis-angle rotation about `(1,1,1)/sqrt(3)`.
pub fn hue_matrix(theta: f32) -> [[f32; 3]; 3] {
    let (s, c) = theta.sin_cos();
    let k = 1.0 / 3.0f32.sqrt();
    let t = (1.0 - c) / 3.0;
    // R = cI + s[k]x + (1-c)kk^T with k = (1,1,1)/sqrt3
    [
        [c + t, -s * k + t, s * k + t],
        [s * k + t, c + t, -s * k + t],
        [-s * k + t, s * k + t, c + t],
    ]
}

fn hue_matrix_derivative(theta: f32) -> [[f32; 3]; 3] {
    let (s, c) = theta.sin_cos();
    let k = 1.0 / 3.0f32.sqrt();
    let t = s / 3.0;
    [
        [-s + t, -c * k + t, c * k + t],
        [c * k + t, -s + t, -c * k + t],
        [-c * k + t, c * k + t, -s + t],
    ]
}

#[inline]
fn mat_vec(m: &[[f32; 3]; 3], v: [f32; 3]) -> [f32; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn rotate_hue(rgb: [f32; 3], theta: f32) -> [f32; 3] {
    mat_vec(&hue_matrix(theta), rgb)
}

/// Precomputed per-parameter constants so per-pixel work stays small.
#[derive(Clone, Copy, Debug)]
pub struct PointwiseGrade {
    p: GradingParams,
    hue: [[f32; 3]; 3],
}

impl PointwiseGrade {
    pub fn new(p: &GradingParams) -> Self {
        Self {
            p: *p,
            hue: hue_matrix(p.hue),
        }
    }

    #[inline]
    pub fn apply(&self, rgb: [f32; 3]) -> [f32; 3] {
        let p = &self.p;
        let t = p.temperature * TEMPERATURE_GAIN;
        let mut v = [rgb[0] + t, rgb[1], rgb[2] - t];
        for x in &mut v {
            *x = contrast(*x + p.brightness, p.contrast).clamp(0.0, 1.0);
            *x = gamma(*x, p.gamma);
        }
        if p.hue != 0.0 {
            v = mat_vec(&self.hue, v);
        }
        let y = luma(v);
        let s = p.saturation;
        v.map(|x| (x * s + y * (1.0 - s)).clamp(0.0, 1.0))
    }
}

/// Grades one RGB triple. Sharpness is spatial and has no effect here.
pub fn apply_pointwise(rgb: [f32; 3], p: &GradingParams) -> [f32; 3] {
    PointwiseGrade::new(p).apply(rgb)
}

/// Pointwise grade plus `d out[c] / d param[k]` in `PARAM_NAMES` order.
pub fn pointwise_jacobian(rgb: [f32; 3], p: &GradingParams) -> ([f32; 3], [[f32; PARAM_COUNT]; 3]) {
    const BRI: usize = 0;
    const CON: usize = 1;
    const GAM: usize = 2;
    const HUE: usize = 3;
    const SAT: usize = 4;
    const TMP: usize = 6;

    let mut v = rgb;
    let mut d = [[0.0f32; PARAM_COUNT]; 3];

    let t = p.temperature * TEMPERATURE_GAIN;
    v[0] += t;
    v[2] -= t;
    d[0][TMP] = TEMPERATURE_GAIN;
    d[2][TMP] = -TEMPERATURE_GAIN;

    for c in 0..3 {
        v[c] += p.brightness;
        d[c][BRI] = 1.0;

        let pre = v[c];
        v[c] = contrast(pre, p.contrast);
        for k in 0..PARAM_COUNT {
            d[c][k] *= p.contrast;
        }
        d[c][CON] = pre - 0.5;

        if v[c] < 0.0 || v[c] > 1.0 {
            v[c] = v[c].clamp(0.0, 1.0);
            d[c] = [0.0; PARAM_COUNT];
        }

        let m = v[c].max(GAMMA_FLOOR);
        let out = gamma(v[c], p.gamma);
        let dv = if v[c] > GAMMA_FLOOR || p.gamma == 1.0 {
            p.gamma * m.powf(p.gamma - 1.0)
        } else {
            0.0
        };
        for k in 0..PARAM_COUNT {
            d[c][k] *= dv;
        }
        d[c][GAM] = out * m.ln();
        v[c] = out;
    }

    let rot = hue_matrix(p.hue);
    let drot = hue_matrix_derivative(p.hue);
    let dtheta = mat_vec(&drot, v);
    let mut rd = [[0.0f32; PARAM_COUNT]; 3];
    for (r, row) in rot.iter().enumerate() {
        for k in 0..PARAM_COUNT {
            rd[r][k] = row[0] * d[0][k] + row[1] * d[1][k] + row[2] * d[2][k];
        }
        rd[r][HUE] += dtheta[r];
    }
    if p.hue != 0.0 {
        v = mat_vec(&rot, v);
    }
    d = rd;

    let y = luma(v);
    let mut dy = [0.0f32; PARAM_COUNT];
    for k in 0..PARAM_COUNT {
        dy[k] = (0..3).map(|c| LUMA_WEIGHTS[c] * d[c][k]).sum();
    }
    let s = p.saturation;
    let mut out = [0.0f32; 3];
    for c in 0..3 {
        let o = v[c] * s + y * (1.0 - s);
        for k in 0..PARAM_COUNT {
            d[c][k] = s * d[c][k] + (1.0 - s) * dy[k];
        }
        d[c][SAT] = v[c] - y;
        if !(0.0..=1.0).contains(&o) {
            d[c] = [0.0; PARAM_COUNT];
        }
        out[c] = o.clamp(0.0, 1.0);
    }
    (out, d)
}

/// Normalised 5-tap Gaussian, sigma = 1.
pub fn gaussian_taps() -> [f32; 5] {
    let raw = [-2.0f32, -1.0, 0.0, 1.0, 2.0].map(|x| (-x * x / 2.0).exp());
    let sum: f32 = raw.iter().sum();
    raw.map(|w| w / sum)
}

/// Separable 5x5 Gaussian blur with clamp-to-edge borders.
pub fn gaussian_blur(img: &RgbImage) -> RgbImage {
    let taps = gaussian_taps();
    let (w, h) = (img.width(), img.height());
    let src = img.data();
    let mut tmp = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (t, wt) in taps.iter().enumerate() {
                    let xx = (x as isize + t as isize - 2).clamp(0, w as isize - 1) as usize;
                    acc += wt * src[(y * w + xx) * 3 + c];
                }
                tmp[(y * w + x) * 3 + c] = acc;
            }
        }
    }
    let mut out = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (t, wt) in taps.iter().enumerate() {
                    let yy = (y as isize + t as isize - 2).clamp(0, h as isize - 1) as usize;
                    acc += wt * tmp[(yy * w + x) * 3 + c];
                }
                out[(y * w + x) * 3 + c] = acc;
            }
        }
    }
    RgbImage::new(w, h, out).expect("same shape")
}

/// Adjoint of [`gaussian_blur`] (the clamped border makes it non-symmetric).
fn gaussian_blur_adjoint(grad: &[f32], w: usize, h: usize) -> Vec<f32> {
    let taps = gaussian_taps();
    let mut tmp = vec![0.0f32; grad.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let g = grad[(y * w + x) * 3 + c];
                for (t, wt) in taps.iter().enumerate() {
                    let yy = (y as isize + t as isize - 2).clamp(0, h as isize - 1) as usize;
                    tmp[(yy * w + x) * 3 + c] += wt * g;
                }
            }
        }
    }
    let mut out = vec![0.0f32; grad.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let g = tmp[(y * w + x) * 3 + c];
                for (t, wt) in taps.iter().enumerate() {
                    let xx = (x as isize + t as isize - 2).clamp(0, w as isize - 1) as usize;
                    out[(y * w + xx) * 3 + c] += wt * g;
                }
            }
        }
    }
    out
}

pub fn apply_pointwise_image(img: &RgbImage, p: &GradingParams) -> RgbImage {
    let op = PointwiseGrade::new(p);
    let mut out = img.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        let v = op.apply([px[0], px[1], px[2]]);
        px.copy_from_slice(&v);
    }
    out
}

/// Full grade: pointwise chain then unsharp mask
/// `clamp(x + sharpness * (x - blur(x)))`.
pub fn apply_params(img: &RgbImage, p: &GradingParams) -> RgbImage {
    let mut out = apply_pointwise_image(img, p);
    if p.sharpness != 0.0 {
        let blurred = gaussian_blur(&out);
        let s = p.sharpness;
        for (x, b) in out.data_mut().iter_mut().zip(blurred.data()) {
            *x = (*x + s * (*x - b)).clamp(0.0, 1.0);
        }
    }
    out
}

/// Vector-Jacobian product of [`apply_params`] with respect to the seven
/// parameters: given `dL/d(out)`, returns `dL/dp` in `PARAM_NAMES` order.
pub fn apply_params_vjp(img: &RgbImage, p: &GradingParams, grad_out: &[f32]) -> [f64; PARAM_COUNT] {
    assert_eq!(grad_out.len(), img.data().len(), "gradient shape mismatch");
    let (w, h) = (img.width(), img.height());
    let mut graded = Vec::with_capacity(img.data().len());
    let mut jac = Vec::with_capacity(img.pixel_count());
    for px in img.pixels() {
        let (v, d) = pointwise_jacobian(px, p);
        graded.extend_from_slice(&v);
        jac.push(d);
    }
    let graded = RgbImage::new(w, h, graded).expect("same shape");
    let blurred = gaussian_blur(&graded);
    let s = p.sharpness;

    let mut grad = [0.0f64; PARAM_COUNT];
    let mut masked = vec![0.0f32; grad_out.len()];
    for (i, ((&x, &b), &g)) in graded.data().iter().zip(blurred.data()).zip(grad_out).enumerate() {
        let y = x + s * (x - b);
        if y > 0.0 && y < 1.0 {
            masked[i] = g;
            grad[5] += (g * (x - b)) as f64;
        }
    }
    let back = gaussian_blur_adjoint(&masked, w, h);
    for (i, d) in jac.iter().enumerate() {
        for c in 0..3 {
            let j = i * 3 + c;
            let gx = (1.0 + s) * masked[j] - s * back[j];
            if gx == 0.0 {
                continue;
            }
            for k in 0..PARAM_COUNT {
                grad[k] += (gx * d[c][k]) as f64;
            }
        }
    }
    grad
}

/// Grades every frame with the same parameters.
pub fn grade_video(video: &VideoFrames, p: &GradingParams) -> VideoFrames {
    let frames = video.frames().iter().map(|f| apply_params(f, p)).collect();
    VideoFrames::new(frames, video.frame_rate()).expect("grading preserves frame shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, lo: f32, hi: f32, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(w, h, |_, _| {
            [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)]
        })
    }

    fn close3(a: [f32; 3], b: [f32; 3], tol: f32) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn pointwise_examples() {
        let id = GradingParams::IDENTITY;
        assert_eq!(apply_pointwise([0.2, 0.4, 0.8], &id), [0.2, 0.4, 0.8]);

        let p = GradingParams { brightness: 0.1, ..id };
        assert!(close3(apply_pointwise([0.5; 3], &p), [0.6; 3], 1e-6));

        // (v - 0.5) * 2 + 0.5, clamped, by hand: 0.2 -> -0.1 -> 0, 0.4 -> 0.3, 0.8 -> 1.1 -> 1
        let p = GradingParams { contrast: 2.0, ..id };
        assert!(close3(apply_pointwise([0.2, 0.4, 0.8], &p), [0.0, 0.3, 1.0], 1e-6));

        let p = GradingParams { saturation: 0.0, ..id };
        let rgb = [0.9, 0.1, 0.35];
        let y = 0.2126 * 0.9 + 0.7152 * 0.1 + 0.0722 * 0.35;
        assert!(close3(apply_pointwise(rgb, &p), [y; 3], 1e-6));
    }

    #[test]
    fn temperature_moves_red_and_blue_only() {
        let p = GradingParams { temperature: 0.5, ..GradingParams::IDENTITY };
        let out = apply_pointwise([0.5; 3], &p);
        assert!(close3(out, [0.65, 0.5, 0.35], 1e-6));
    }

    #[test]
    fn gamma_darkens_midtones() {
        let p = GradingParams { gamma: 2.0, ..GradingParams::IDENTITY };
        assert!(close3(apply_pointwise([0.5; 3], &p), [0.25; 3], 1e-6));
    }

    #[test]
    fn hue_matrix_is_orthonormal_and_keeps_grey() {
        let m = hue_matrix(0.6);
        for i in 0..3 {
            for j in 0..3 {
                let dot: f32 = (0..3).map(|k| m[i][k] * m[j][k]).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-6);
            }
        }
        assert!(close3(rotate_hue([0.4; 3], 0.6), [0.4; 3], 1e-6));
    }

    #[test]
    fn identity_is_bit_exact() {
        let img = random_image(17, 9, 0.0, 1.0, 5);
        assert_eq!(apply_params(&img, &GradingParams::IDENTITY), img);
        let edge = RgbImage::new(2, 1, vec![0.0, 1.0, 1e-9, 1.0, 0.0, 0.5]).unwrap();
        assert_eq!(apply_params(&edge, &GradingParams::IDENTITY), edge);
    }

    #[test]
    fn sharpness_leaves_constant_images() {
        let img = RgbImage::filled(6, 6, [0.3, 0.6, 0.2]);
        let p = GradingParams { sharpness: 2.0, ..GradingParams::IDENTITY };
        let out = apply_params(&img, &p);
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn image_matches_pointwise_loop_without_sharpness() {
        let img = random_image(8, 8, 0.0, 1.0, 11);
        let p = GradingParams {
            brightness: 0.05,
            contrast: 1.3,
            gamma: 0.8,
            hue: 0.3,
            saturation: 1.4,
            sharpness: 0.0,
            temperature: -0.2,
        };
        let out = apply_params(&img, &p);
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(out.pixel(x, y), apply_pointwise(img.pixel(x, y), &p));
            }
        }
    }

    #[test]
    fn blur_taps_are_normalised_and_symmetric() {
        let t = gaussian_taps();
        assert!((t.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert_eq!(t[0], t[4]);
        assert_eq!(t[1], t[3]);
    }

    #[test]
    fn blur_adjoint_satisfies_dot_product_identity() {
        let x = random_image(7, 5, 0.0, 1.0, 1);
        let y = random_image(7, 5, -1.0, 1.0, 2);
        let bx = gaussian_blur(&x);
        let bty = gaussian_blur_adjoint(y.data(), 7, 5);
        let lhs: f64 = bx.data().iter().zip(y.data()).map(|(a, b)| (a * b) as f64).sum();
        let rhs: f64 = x.data().iter().zip(&bty).map(|(a, b)| (a * b) as f64).sum();
        assert!((lhs - rhs).abs() < 1e-4);
    }

    #[test]
    fn brightness_is_monotone_on_grey() {
        let img = RgbImage::filled(3, 3, [0.4; 3]);
        let mut prev = 0.0;
        for b in [-0.3f32, -0.1, 0.0, 0.1, 0.3] {
            let p = GradingParams { brightness: b, ..GradingParams::IDENTITY };
            let v = apply_params(&img, &p).pixel(1, 1)[0];
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn grade_video_is_per_frame_and_stable() {
        let a = random_image(4, 4, 0.0, 1.0, 1);
        let p = GradingParams { saturation: 1.5, contrast: 1.2, ..GradingParams::IDENTITY };
        let video = VideoFrames::new(vec![a.clone(), a.clone(), random_image(4, 4, 0.0, 1.0, 2)], 25.0).unwrap();
        let out = grade_video(&video, &p);
        assert_eq!(out.len(), 3);
        assert_eq!(out.frame_rate(), 25.0);
        assert_eq!(out.frames()[0], out.frames()[1]);
        for (o, f) in out.frames().iter().zip(video.frames()) {
            assert_eq!(*o, apply_params(f, &p));
        }
        assert_eq!(grade_video(&video, &GradingParams::IDENTITY), video);
    }

    #[test]
    fn json_schema_is_strict() {
        let p = GradingParams { brightness: 0.05, ..GradingParams::IDENTITY };
        let back = GradingParams::from_json(&p.to_json()).unwrap();
        assert_eq!(back, p);
        let text = r#"{"brightness":0,"contrast":1,"gamma":1,"hue":0,"saturation":1,"sharpness":0,"temperature":0,"tint":0}"#;
        assert!(GradingParams::from_json(text).is_err());
        let text = r#"{"brightness":0.9,"contrast":1,"gamma":1,"hue":0,"saturation":1,"sharpness":0,"temperature":0}"#;
        assert!(GradingParams::from_json(text).is_err());
    }

    fn mean_of_grade(img: &RgbImage, p: &GradingParams) -> f64 {
        let out = apply_params(img, p);
        out.data().iter().map(|&v| v as f64).sum::<f64>() / out.data().len() as f64
    }

    #[test]
    fn gradients_match_central_differences() {
        // Gentle parameters keep pixels away from the clamps.
        let img = random_image(12, 10, 0.1, 0.9, 21);
        let p = GradingParams {
            brightness: 0.02,
            contrast: 0.9,
            gamma: 1.1,
            hue: 0.2,
            saturation: 0.9,
            sharpness: 0.3,
            temperature: 0.05,
        };
        let n = img.data().len();
        let analytic = apply_params_vjp(&img, &p, &vec![1.0 / n as f32; n]);
        let step = 1e-3f32;
        for k in 0..PARAM_COUNT {
            let mut hi = p.to_array();
            let mut lo = p.to_array();
            hi[k] += step;
            lo[k] -= step;
            let fd = (mean_of_grade(&img, &GradingParams::from_array(hi))
                - mean_of_grade(&img, &GradingParams::from_array(lo)))
                / (2.0 * step as f64);
            let a = analytic[k];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
            assert!(rel <= 1e-2, "{}: analytic {a} vs fd {fd}", PARAM_NAMES[k]);
        }
    }

    proptest::proptest! {
        #[test]
        fn hue_round_trip(r in 0.0f32..1.0, g in 0.0f32..1.0, b in 0.0f32..1.0, theta in -0.78f32..0.78) {
            let back = rotate_hue(rotate_hue([r, g, b], theta), -theta);
            proptest::prop_assert!(close3(back, [r, g, b], 1e-5));
        }

        #[test]
        fn pointwise_output_in_unit_cube(
            r in 0.0f32..=1.0, g in 0.0f32..=1.0, b in 0.0f32..=1.0,
            br in -0.5f32..=0.5, co in 0.5f32..=2.0, ga in 0.33f32..=3.0, hu in -0.785f32..=0.785,
            sa in 0.0f32..=2.0, te in -0.5f32..=0.5,
        ) {
            let p = GradingParams { brightness: br, contrast: co, gamma: ga, hue: hu, saturation: sa, sharpness: 0.0, temperature: te };
            let out = apply_pointwise([r, g, b], &p);
            proptest::prop_assert!(out.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
            let (jv, _) = pointwise_jacobian([r, g, b], &p);
            proptest::prop_assert!(close3(jv, out, 1e-6));
        }
    }
}
