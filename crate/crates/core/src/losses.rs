//! Style, content and colour-histogram losses and their weighted total.
//!
//! All norms are root-sum-square over every element (no mean reduction).
//! Each loss has a `*_grad` twin returning the gradient with respect to the
//! stylised side, which is what training back-propagates.

use serde::{Deserialize, Serialize};

use crate::encoder::{Features, PerceptualEncoder, TAP_COUNT};
use crate::error::{Error, Result};
use crate::imaging::RgbImage;
use crate::nn::{channel_moments, FeatureMap};

pub const DEFAULT_BINS: usize = 64;
pub const HIST_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_s: f64,
    pub lambda_c: f64,
    pub lambda_color: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_s: 10.0,
            lambda_c: 1.0,
            lambda_color: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.lambda_s, self.lambda_c, self.lambda_color];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        if w.iter().all(|v| *v == 0.0) {
            return Err(Error::Config("loss weights must not all be zero".into()));
        }
        Ok(())
    }
}

/// Weighted total plus the unweighted components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub style: f64,
    pub content: f64,
    pub color: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.style.is_finite() && self.content.is_finite() && self.color.is_finite()
    }
}

fn check_shapes(a: &Features, b: &Features) -> Result<()> {
    for (j, (x, y)) in a.iter().zip(b).enumerate() {
        if x.channels != y.channels {
            return Err(Error::Contract(format!(
                "style features at scale {j} have {} vs {} channels",
                x.channels, y.channels
            )));
        }
    }
    Ok(())
}

fn l2(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// Sum over scales of `||mu_style - mu_out||_2 + ||sigma_style - sigma_out||_2`
/// with per-channel spatial mean and standard deviation.
pub fn style_loss(stylized: &Features, style: &Features) -> Result<f64> {
    check_shapes(stylized, style)?;
    Ok(stylized
        .iter()
        .zip(style)
        .map(|(o, s)| {
            let (om, os) = channel_moments(o);
            let (sm, ss) = channel_moments(s);
            l2(om.iter().zip(&sm).map(|(a, b)| b - a)) + l2(os.iter().zip(&ss).map(|(a, b)| b - a))
        })
        .sum())
}

pub fn style_loss_grad(stylized: &Features, style: &Features) -> Result<(f64, Features)> {
    check_shapes(stylized, style)?;
    let mut total = 0.0;
    let grads: Vec<FeatureMap> = stylized
        .iter()
        .zip(style)
        .map(|(o, s)| {
            let (om, os) = channel_moments(o);
            let (sm, ss) = channel_moments(s);
            let dm: Vec<f64> = om.iter().zip(&sm).map(|(a, b)| a - b).collect();
            let ds: Vec<f64> = os.iter().zip(&ss).map(|(a, b)| a - b).collect();
            let nm = l2(dm.iter().copied());
            let ns = l2(ds.iter().copied());
            total += nm + ns;
            let n = o.plane_len() as f64;
            let mut g = FeatureMap::zeros(o.channels, o.height, o.width);
            for c in 0..o.channels {
                let gm = if nm > 0.0 { dm[c] / nm } else { 0.0 };
                let gs = if ns > 0.0 && os[c] > 0.0 { ds[c] / ns } else { 0.0 };
                for (gi, &x) in g.channel_mut(c).iter_mut().zip(o.channel(c)) {
                    let dstd = if os[c] > 0.0 { (x as f64 - om[c]) / (n * os[c]) } else { 0.0 };
                    *gi = (gm / n + gs * dstd) as f32;
                }
            }
            g
        })
        .collect();
    let grads: Features = grads.try_into().expect("four scales");
    Ok((total, grads))
}

/// `||F4_out - F4_content||_2` on the deepest tap.
pub fn content_loss(stylized: &FeatureMap, content: &FeatureMap) -> Result<f64> {
    if !stylized.same_shape(content) {
        return Err(Error::Contract(format!(
            "content loss shape mismatch: {:?} vs {:?}",
            stylized.shape(),
            content.shape()
        )));
    }
    Ok(l2(stylized.data.iter().zip(&content.data).map(|(a, b)| *a as f64 - *b as f64)))
}

pub fn content_loss_grad(stylized: &FeatureMap, content: &FeatureMap) -> Result<(f64, FeatureMap)> {
    let norm = content_loss(stylized, content)?;
    let mut g = FeatureMap::zeros(stylized.channels, stylized.height, stylized.width);
    if norm > 0.0 {
        for (gi, (a, b)) in g.data.iter_mut().zip(stylized.data.iter().zip(&content.data)) {
            *gi = ((*a as f64 - *b as f64) / norm) as f32;
        }
    }
    Ok((norm, g))
}

/// Per-channel histogram normalised as `(h + eps) / (sum h + eps)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftHistogram {
    n_bins: usize,
    /// Raw kernel mass per bin, `3 * n_bins`, channel-major.
    counts: Vec<f64>,
    /// Normalised values, same layout.
    bins: Vec<f64>,
}

impl SoftHistogram {
    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.bins[c * self.n_bins..(c + 1) * self.n_bins]
    }

    pub fn raw_channel(&self, c: usize) -> &[f64] {
        &self.counts[c * self.n_bins..(c + 1) * self.n_bins]
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }
}

/// Bins whose triangular kernel covers `v`, with weight and `d weight / d v`.
#[inline]
fn kernel_taps(v: f32, n_bins: usize) -> impl Iterator<Item = (usize, f64, f64)> {
    let n = n_bins as f64;
    let pos = v as f64 * n - 0.5;
    let base = pos.floor() as i64;
    (base..=base + 1).filter_map(move |k| {
        if k < 0 || k >= n_bins as i64 {
            return None;
        }
        let d = pos - k as f64;
        let w = 1.0 - d.abs();
        if w <= 0.0 {
            return None;
        }
        let dw = if d > 0.0 { -n } else { n };
        Some((k as usize, w, dw))
    })
}

/// Triangular-kernel soft histogram with bin centres `(j + 0.5) / n_bins`.
pub fn soft_histogram(img: &RgbImage, n_bins: usize) -> SoftHistogram {
    assert!(n_bins >= 2, "need at least two bins");
    let mut counts = vec![0.0f64; 3 * n_bins];
    for px in img.pixels() {
        for (c, &v) in px.iter().enumerate() {
            for (k, w, _) in kernel_taps(v, n_bins) {
                counts[c * n_bins + k] += w;
            }
        }
    }
    let mut bins = vec![0.0f64; 3 * n_bins];
    for c in 0..3 {
        let row = &counts[c * n_bins..(c + 1) * n_bins];
        let total: f64 = row.iter().sum();
        for (b, &h) in bins[c * n_bins..(c + 1) * n_bins].iter_mut().zip(row) {
            *b = (h + HIST_EPS) / (total + HIST_EPS);
        }
    }
    SoftHistogram { n_bins, counts, bins }
}

/// KL-style divergence between normalised histograms,
/// `sum t * ln(t / (i + eps))` over channels and bins.
pub fn histogram_divergence(input: &SoftHistogram, target: &SoftHistogram) -> f64 {
    assert_eq!(input.n_bins, target.n_bins, "bin count mismatch");
    input
        .bins
        .iter()
        .zip(&target.bins)
        .map(|(&i, &t)| t * (t / (i + HIST_EPS)).ln())
        .sum()
}

pub fn color_hist_loss(input: &RgbImage, target: &RgbImage, n_bins: usize) -> f64 {
    histogram_divergence(&soft_histogram(input, n_bins), &soft_histogram(target, n_bins))
}

/// Loss against a precomputed target histogram plus `dL / d(input pixels)`.
pub fn color_hist_loss_grad(input: &RgbImage, target: &SoftHistogram) -> (f64, Vec<f32>) {
    let n_bins = target.n_bins;
    let hist = soft_histogram(input, n_bins);
    let loss = histogram_divergence(&hist, target);
    // dL/dh_k through the eps-smoothed normalisation.
    let mut dh = vec![0.0f64; 3 * n_bins];
    for c in 0..3 {
        let raw = hist.raw_channel(c);
        let norm = hist.channel(c);
        let t = target.channel(c);
        let s = raw.iter().sum::<f64>() + HIST_EPS;
        let a: Vec<f64> = norm.iter().zip(t).map(|(&i, &t)| -t / (i + HIST_EPS)).collect();
        let cross: f64 = a.iter().zip(raw).map(|(&ak, &hk)| ak * (hk + HIST_EPS)).sum::<f64>() / (s * s);
        for k in 0..n_bins {
            dh[c * n_bins + k] = a[k] / s - cross;
        }
    }
    let mut grad = vec![0.0f32; input.data().len()];
    for (i, &v) in input.data().iter().enumerate() {
        let c = i % 3;
        let g: f64 = kernel_taps(v, n_bins).map(|(k, _, dw)| dh[c * n_bins + k] * dw).sum();
        grad[i] = g as f32;
    }
    (loss, grad)
}

/// Everything about the content and style images that the loss needs,
/// computed once per pair.
#[derive(Clone, Debug)]
pub struct LossTargets {
    pub content_deep: FeatureMap,
    pub style_features: Features,
    pub style_hist: SoftHistogram,
}

impl LossTargets {
    pub fn new(enc: &PerceptualEncoder, content: &RgbImage, style: &RgbImage, n_bins: usize) -> Self {
        let content_feats = enc.encode(content);
        Self::from_features(&content_feats, enc.encode(style), style, n_bins)
    }

    pub fn from_features(content: &Features, style_features: Features, style: &RgbImage, n_bins: usize) -> Self {
        Self {
            content_deep: content[TAP_COUNT - 1].clone(),
            style_features,
            style_hist: soft_histogram(style, n_bins),
        }
    }

    pub fn evaluate(&self, enc: &PerceptualEncoder, stylized: &RgbImage, w: &LossWeights) -> Result<LossBreakdown> {
        let feats = enc.encode(stylized);
        let style = style_loss(&feats, &self.style_features)?;
        let content = content_loss(&feats[TAP_COUNT - 1], &self.content_deep)?;
        let color = histogram_divergence(&soft_histogram(stylized, self.style_hist.n_bins), &self.style_hist);
        Ok(LossBreakdown {
            total: w.lambda_s * style + w.lambda_c * content + w.lambda_color * color,
            style,
            content,
            color,
        })
    }

    /// Loss and `dL / d(stylized pixels)`, interleaved RGB.
    pub fn evaluate_with_grad(
        &self,
        enc: &PerceptualEncoder,
        stylized: &RgbImage,
        w: &LossWeights,
    ) -> Result<(LossBreakdown, Vec<f32>)> {
        let trace = enc.forward_traced(stylized);
        let feats = trace.features();
        let (style, mut tap_grads) = style_loss_grad(feats, &self.style_features)?;
        let (content, gc) = content_loss_grad(&feats[TAP_COUNT - 1], &self.content_deep)?;
        for g in tap_grads.iter_mut() {
            for v in &mut g.data {
                *v *= w.lambda_s as f32;
            }
        }
        for (a, b) in tap_grads[TAP_COUNT - 1].data.iter_mut().zip(&gc.data) {
            *a += w.lambda_c as f32 * b;
        }
        let mut grad = enc.backward_input(&trace, &tap_grads);
        let (color, gh) = color_hist_loss_grad(stylized, &self.style_hist);
        for (a, b) in grad.iter_mut().zip(&gh) {
            *a += w.lambda_color as f32 * b;
        }
        let loss = LossBreakdown {
            total: w.lambda_s * style + w.lambda_c * content + w.lambda_color * color,
            style,
            content,
            color,
        };
        Ok((loss, grad))
    }
}

/// Weighted total of style, content and colour-histogram losses.
pub fn total_loss(
    content: &RgbImage,
    style: &RgbImage,
    stylized: &RgbImage,
    enc: &PerceptualEncoder,
    w: &LossWeights,
    n_bins: usize,
) -> Result<LossBreakdown> {
    LossTargets::new(enc, content, style, n_bins).evaluate(enc, stylized, w)
}
