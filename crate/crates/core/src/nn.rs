//! Minimal CHW feature-map layers with explicit backward passes.
//!
//! Trainable weights live in one flat `Vec<f32>`; layers only record offsets
//! into it. Gradients accumulate into a buffer with the same layout, which
//! keeps the optimiser and checkpoint code layout-agnostic.

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Epsilon added to the content standard deviation inside AdaIN.
pub const ADAIN_EPS: f32 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_data(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), channels * height * width, "feature map shape mismatch");
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Per-channel spatial mean and (population) standard deviation, in f64.
pub fn channel_moments(f: &FeatureMap) -> (Vec<f64>, Vec<f64>) {
    let n = f.plane_len() as f64;
    (0..f.channels)
        .map(|c| {
            let ch = f.channel(c);
            let mean = ch.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = ch.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        })
        .unzip()
}

/// 3x3 convolution, stride 1, zero padding 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3x3 {
    pub in_ch: usize,
    pub out_ch: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl Conv3x3 {
    /// Allocates `in*out*9 + out` slots at the end of `params`.
    pub fn allocate(params: &mut Vec<f32>, in_ch: usize, out_ch: usize) -> Self {
        let weight_offset = params.len();
        let bias_offset = weight_offset + in_ch * out_ch * 9;
        params.resize(bias_offset + out_ch, 0.0);
        Self {
            in_ch,
            out_ch,
            weight_offset,
            bias_offset,
        }
    }

    pub fn weight_len(&self) -> usize {
        self.in_ch * self.out_ch * 9
    }

    pub fn weights<'a>(&self, params: &'a [f32]) -> &'a [f32] {
        &params[self.weight_offset..self.weight_offset + self.weight_len()]
    }

    pub fn bias<'a>(&self, params: &'a [f32]) -> &'a [f32] {
        &params[self.bias_offset..self.bias_offset + self.out_ch]
    }

    /// He-normal weights, zero bias.
    pub fn init_he<R: Rng>(&self, params: &mut [f32], rng: &mut R, scale: f32) {
        let std = scale * (2.0 / (self.in_ch * 9) as f32).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        for w in &mut params[self.weight_offset..self.weight_offset + self.weight_len()] {
            *w = normal.sample(rng);
        }
        for b in &mut params[self.bias_offset..self.bias_offset + self.out_ch] {
            *b = 0.0;
        }
    }

    pub fn forward(&self, params: &[f32], x: &FeatureMap) -> FeatureMap {
        assert_eq!(x.channels, self.in_ch, "conv input channels");
        let hw = x.plane_len();
        let k = self.in_ch * 9;
        let col = im2col(x);
        let mut out = FeatureMap::zeros(self.out_ch, x.height, x.width);
        for (o, &b) in self.bias(params).iter().enumerate() {
            out.channel_mut(o).fill(b);
        }
        // out[out_ch x hw] += W[out_ch x k] * col[k x hw]
        unsafe {
            matrixmultiply::sgemm(
                self.out_ch,
                k,
                hw,
                1.0,
                self.weights(params).as_ptr(),
                k as isize,
                1,
                col.as_ptr(),
                hw as isize,
                1,
                1.0,
                out.data.as_mut_ptr(),
                hw as isize,
                1,
            );
        }
        out
    }

    /// Backward pass. Accumulates weight/bias gradients into `grads` when
    /// given and returns the input gradient when `need_input` is set.
    pub fn backward(
        &self,
        params: &[f32],
        x: &FeatureMap,
        grad_out: &FeatureMap,
        grads: Option<&mut [f32]>,
        need_input: bool,
    ) -> Option<FeatureMap> {
        let hw = x.plane_len();
        let k = self.in_ch * 9;
        if let Some(grads) = grads {
            let col = im2col(x);
            let gw = &mut grads[self.weight_offset..self.weight_offset + self.weight_len()];
            // gW[out x k] += gY[out x hw] * col^T[hw x k]
            unsafe {
                matrixmultiply::sgemm(
                    self.out_ch,
                    hw,
                    k,
                    1.0,
                    grad_out.data.as_ptr(),
                    hw as isize,
                    1,
                    col.as_ptr(),
                    1,
                    hw as isize,
                    1.0,
                    gw.as_mut_ptr(),
                    k as isize,
                    1,
                );
            }
            let gb = &mut grads[self.bias_offset..self.bias_offset + self.out_ch];
            for (o, g) in gb.iter_mut().enumerate() {
                *g += grad_out.channel(o).iter().sum::<f32>();
            }
        }
        if !need_input {
            return None;
        }
        let mut gcol = vec![0.0f32; k * hw];
        // gcol[k x hw] = W^T[k x out] * gY[out x hw]
        unsafe {
            matrixmultiply::sgemm(
                k,
                self.out_ch,
                hw,
                1.0,
                self.weights(params).as_ptr(),
                1,
                k as isize,
                grad_out.data.as_ptr(),
                hw as isize,
                1,
                0.0,
                gcol.as_mut_ptr(),
                hw as isize,
                1,
            );
        }
        Some(col2im(&gcol, self.in_ch, x.height, x.width))
    }
}

/// Unfolds 3x3 zero-padded neighbourhoods into a `(C*9) x (H*W)` matrix.
fn im2col(x: &FeatureMap) -> Vec<f32> {
    let (h, w) = (x.height, x.width);
    let hw = h * w;
    let mut col = vec![0.0f32; x.channels * 9 * hw];
    for c in 0..x.channels {
        let plane = x.channel(c);
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((c * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    let (x0, x1) = match kx {
                        0 => (1, w),
                        1 => (0, w),
                        _ => (0, w.saturating_sub(1)),
                    };
                    for xx in x0..x1 {
                        dst[xx] = src[xx + kx - 1];
                    }
                }
            }
        }
    }
    col
}

fn col2im(col: &[f32], channels: usize, h: usize, w: usize) -> FeatureMap {
    let hw = h * w;
    let mut out = FeatureMap::zeros(channels, h, w);
    for c in 0..channels {
        let plane = out.channel_mut(c);
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[((c * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..][..w];
                    let dst = &mut plane[sy as usize * w..][..w];
                    let (x0, x1) = match kx {
                        0 => (1, w),
                        1 => (0, w),
                        _ => (0, w.saturating_sub(1)),
                    };
                    for xx in x0..x1 {
                        dst[xx + kx - 1] += src[xx];
                    }
                }
            }
        }
    }
    out
}

pub fn relu(x: &FeatureMap) -> FeatureMap {
    FeatureMap {
        data: x.data.iter().map(|&v| v.max(0.0)).collect(),
        ..*x
    }
}

/// Passes gradient where the ReLU output was positive.
pub fn relu_backward(out: &FeatureMap, grad: &FeatureMap) -> FeatureMap {
    FeatureMap {
        data: out
            .data
            .iter()
            .zip(&grad.data)
            .map(|(&o, &g)| if o > 0.0 { g } else { 0.0 })
            .collect(),
        ..*out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureMapShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// 2x2 max pooling, stride 2 (odd trailing rows/columns dropped). Returns the
/// pooled map and the flat argmax index of each output element.
pub fn max_pool2(x: &FeatureMap) -> (FeatureMap, Vec<u32>) {
    let (oh, ow) = (x.height / 2, x.width / 2);
    assert!(oh > 0 && ow > 0, "feature map too small to pool");
    let mut out = FeatureMap::zeros(x.channels, oh, ow);
    let mut arg = Vec::with_capacity(out.data.len());
    for c in 0..x.channels {
        let plane = x.channel(c);
        let base = c * x.plane_len();
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut best_i = 0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let i = (2 * y + dy) * x.width + 2 * xx + dx;
                        if plane[i] > best {
                            best = plane[i];
                            best_i = i;
                        }
                    }
                }
                out.data[c * oh * ow + y * ow + xx] = best;
                arg.push((base + best_i) as u32);
            }
        }
    }
    (out, arg)
}

pub fn max_pool2_backward(input_shape: FeatureMapShape, argmax: &[u32], grad: &FeatureMap) -> FeatureMap {
    let mut out = FeatureMap::zeros(input_shape.channels, input_shape.height, input_shape.width);
    for (&i, &g) in argmax.iter().zip(&grad.data) {
        out.data[i as usize] += g;
    }
    out
}

impl FeatureMap {
    pub fn shape(&self) -> FeatureMapShape {
        FeatureMapShape {
            channels: self.channels,
            height: self.height,
            width: self.width,
        }
    }
}

/// Adaptive instance normalisation: re-statistics `content` to the
/// per-channel mean and standard deviation of `style`.
pub fn adain(content: &FeatureMap, style: &FeatureMap) -> FeatureMap {
    assert_eq!(content.channels, style.channels, "AdaIN channel mismatch");
    let (cm, cs) = channel_moments(content);
    let (sm, ss) = channel_moments(style);
    let mut out = FeatureMap::zeros(content.channels, content.height, content.width);
    for c in 0..content.channels {
        let scale = (ss[c] / (cs[c] + ADAIN_EPS as f64)) as f32;
        let (cmean, smean) = (cm[c] as f32, sm[c] as f32);
        for (o, &v) in out.channel_mut(c).iter_mut().zip(content.channel(c)) {
            *o = (v - cmean) * scale + smean;
        }
    }
    out
}

/// Gradients of [`adain`] with respect to content and style maps.
pub fn adain_backward(content: &FeatureMap, style: &FeatureMap, grad: &FeatureMap) -> (FeatureMap, FeatureMap) {
    let (cm, cs) = channel_moments(content);
    let (sm, ss) = channel_moments(style);
    let mut gc = FeatureMap::zeros(content.channels, content.height, content.width);
    let mut gs = FeatureMap::zeros(style.channels, style.height, style.width);
    let nc = content.plane_len() as f64;
    let ns = style.plane_len() as f64;
    for c in 0..content.channels {
        let denom = cs[c] + ADAIN_EPS as f64;
        let g = grad.channel(c);
        let x = content.channel(c);
        // normalised content and the upstream gradient through it
        let mut sum_g = 0.0f64;
        let mut sum_gn = 0.0f64;
        for (&gi, &xi) in g.iter().zip(x) {
            let n = (xi as f64 - cm[c]) / denom;
            sum_g += gi as f64;
            sum_gn += gi as f64 * n;
        }
        // d/d(style mean) = sum g ; d/d(style std) = sum g * n
        let s = style.channel(c);
        for (o, &si) in gs.channel_mut(c).iter_mut().zip(s) {
            let dstd = if ss[c] > 0.0 { (si as f64 - sm[c]) / (ns * ss[c]) } else { 0.0 };
            *o = (sum_g / ns + sum_gn * dstd) as f32;
        }
        // dn_i = g_i * sigma_s ; n = (x - mu)/(sigma + eps)
        let sig = ss[c];
        let sum_dn = sum_g * sig;
        let sum_dn_xc: f64 = sum_gn * sig * denom;
        for (o, (&gi, &xi)) in gc.channel_mut(c).iter_mut().zip(g.iter().zip(x)) {
            let xc = xi as f64 - cm[c];
            let dstd = if cs[c] > 0.0 { xc / (nc * cs[c]) } else { 0.0 };
            let v = gi as f64 * sig / denom - sum_dn / (nc * denom) - sum_dn_xc / (denom * denom) * dstd;
            *o = v as f32;
        }
    }
    (gc, gs)
}

/// Global average pool to one value per channel.
pub fn avg_pool(x: &FeatureMap) -> Vec<f32> {
    let n = x.plane_len() as f64;
    (0..x.channels)
        .map(|c| (x.channel(c).iter().map(|&v| v as f64).sum::<f64>() / n) as f32)
        .collect()
}

pub fn avg_pool_backward(shape: FeatureMapShape, grad: &[f32]) -> FeatureMap {
    let mut out = FeatureMap::zeros(shape.channels, shape.height, shape.width);
    let n = (shape.height * shape.width) as f32;
    for (c, &g) in grad.iter().enumerate() {
        out.channel_mut(c).fill(g / n);
    }
    out
}

/// Fully connected layer `y = W x + b`, `W` row-major `out x in`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl Linear {
    pub fn allocate(params: &mut Vec<f32>, in_dim: usize, out_dim: usize) -> Self {
        let weight_offset = params.len();
        let bias_offset = weight_offset + in_dim * out_dim;
        params.resize(bias_offset + out_dim, 0.0);
        Self {
            in_dim,
            out_dim,
            weight_offset,
            bias_offset,
        }
    }

    pub fn init_he<R: Rng>(&self, params: &mut [f32], rng: &mut R, scale: f32) {
        let std = scale * (2.0 / self.in_dim as f32).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        for w in &mut params[self.weight_offset..self.bias_offset] {
            *w = normal.sample(rng);
        }
        for b in &mut params[self.bias_offset..self.bias_offset + self.out_dim] {
            *b = 0.0;
        }
    }

    pub fn zero(&self, params: &mut [f32]) {
        params[self.weight_offset..self.bias_offset + self.out_dim].fill(0.0);
    }

    pub fn forward(&self, params: &[f32], x: &[f32]) -> Vec<f32> {
        assert_eq!(x.len(), self.in_dim, "linear input size");
        let w = &params[self.weight_offset..self.bias_offset];
        let b = &params[self.bias_offset..self.bias_offset + self.out_dim];
        (0..self.out_dim)
            .map(|o| {
                let row = &w[o * self.in_dim..(o + 1) * self.in_dim];
                b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f32>()
            })
            .collect()
    }

    pub fn backward(&self, params: &[f32], x: &[f32], grad_out: &[f32], grads: &mut [f32]) -> Vec<f32> {
        let w = &params[self.weight_offset..self.bias_offset];
        let mut gx = vec![0.0f32; self.in_dim];
        for (o, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let gw = &mut grads[self.weight_offset + o * self.in_dim..][..self.in_dim];
            for (gwi, &xi) in gw.iter_mut().zip(x) {
                *gwi += g * xi;
            }
            grads[self.bias_offset + o] += g;
            for (gxi, &wi) in gx.iter_mut().zip(&w[o * self.in_dim..(o + 1) * self.in_dim]) {
                *gxi += g * wi;
            }
        }
        gx
    }
}
