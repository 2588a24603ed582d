//! Procedural imagery for the bundled sample, tests and demos.
//!
//! Scenes are smooth backgrounds with soft-edged blobs and a little grain,
//! fully determined by a seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imaging::{RgbImage, VideoFrames, DEFAULT_FRAME_RATE};

pub const CONTENT_PALETTES: [[[f32; 3]; 4]; 5] = [
    [[0.32, 0.45, 0.22], [0.55, 0.68, 0.85], [0.42, 0.33, 0.24], [0.80, 0.78, 0.70]],
    [[0.60, 0.60, 0.62], [0.25, 0.30, 0.38], [0.75, 0.55, 0.40], [0.20, 0.45, 0.30]],
    [[0.85, 0.80, 0.65], [0.35, 0.55, 0.70], [0.55, 0.40, 0.30], [0.15, 0.20, 0.18]],
    [[0.45, 0.50, 0.55], [0.70, 0.30, 0.25], [0.30, 0.35, 0.25], [0.90, 0.88, 0.85]],
    [[0.50, 0.62, 0.40], [0.40, 0.40, 0.45], [0.65, 0.60, 0.50], [0.28, 0.22, 0.20]],
];

pub const STYLE_PALETTES: [[[f32; 3]; 4]; 5] = [
    [[0.95, 0.55, 0.20], [0.55, 0.20, 0.35], [0.98, 0.80, 0.45], [0.30, 0.10, 0.25]],
    [[0.05, 0.35, 0.40], [0.95, 0.60, 0.30], [0.10, 0.20, 0.25], [0.85, 0.75, 0.55]],
    [[0.45, 0.36, 0.25], [0.70, 0.60, 0.45], [0.25, 0.20, 0.14], [0.88, 0.80, 0.65]],
    [[0.08, 0.12, 0.30], [0.20, 0.35, 0.60], [0.02, 0.04, 0.10], [0.55, 0.70, 0.90]],
    [[0.98, 0.70, 0.80], [0.60, 0.90, 0.80], [0.95, 0.95, 0.60], [0.70, 0.60, 0.95]],
];

#[derive(Clone, Debug)]
struct Blob {
    cx: f32,
    cy: f32,
    vx: f32,
    vy: f32,
    radius: f32,
    color: [f32; 3],
}

#[derive(Clone, Debug)]
pub struct Scene {
    top: [f32; 3],
    bottom: [f32; 3],
    tilt: f32,
    blobs: Vec<Blob>,
    grain: f32,
    seed: u64,
}

impl Scene {
    pub fn new(palette: &[[f32; 3]; 4], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blobs = (0..6)
            .map(|i| Blob {
                cx: rng.random_range(0.1..0.9),
                cy: rng.random_range(0.15..0.95),
                vx: rng.random_range(-0.004..0.004),
                vy: rng.random_range(-0.002..0.002),
                radius: rng.random_range(0.08..0.22),
                color: jitter(palette[(i + 2) % 4], &mut rng),
            })
            .collect();
        Self {
            top: palette[1],
            bottom: palette[0],
            tilt: rng.random_range(-0.3..0.3),
            blobs,
            grain: 0.015,
            seed,
        }
    }

    /// Frame `t` of the scene; blobs drift with constant velocity.
    pub fn render(&self, width: usize, height: usize, t: usize) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(t as u64 + 1)));
        let mut img = RgbImage::from_fn(width, height, |x, y| {
            let u = (x as f32 + 0.5) / width as f32;
            let v = (y as f32 + 0.5) / height as f32;
            let s = (v + self.tilt * (u - 0.5)).clamp(0.0, 1.0);
            let mut px = [0.0f32; 3];
            for c in 0..3 {
                px[c] = self.top[c] * (1.0 - s) + self.bottom[c] * s;
            }
            for b in &self.blobs {
                let dx = u - (b.cx + b.vx * t as f32);
                let dy = v - (b.cy + b.vy * t as f32);
                let d = (dx * dx + dy * dy).sqrt() / b.radius;
                let a = (1.0 - smoothstep(0.8, 1.0, d)) * 0.9;
                for c in 0..3 {
                    px[c] = px[c] * (1.0 - a) + b.color[c] * a * (1.0 - 0.25 * d.min(1.0));
                }
            }
            px
        });
        for v in img.data_mut() {
            *v = (*v + rng.random_range(-self.grain..self.grain)).clamp(0.0, 1.0);
        }
        img
    }
}

fn jitter(c: [f32; 3], rng: &mut ChaCha8Rng) -> [f32; 3] {
    c.map(|v| (v + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0))
}

fn smoothstep(e0: f32, e1: f32, x: f32) -> f32 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

pub fn content_image(index: usize, width: usize, height: usize) -> RgbImage {
    let palette = &CONTENT_PALETTES[index % CONTENT_PALETTES.len()];
    Scene::new(palette, 1000 + index as u64).render(width, height, 0)
}

pub fn style_image(index: usize, width: usize, height: usize) -> RgbImage {
    let palette = &STYLE_PALETTES[index % STYLE_PALETTES.len()];
    Scene::new(palette, 2000 + index as u64).render(width, height, 0)
}

/// `frames` consecutive frames of a slowly moving scene at 25 fps.
pub fn sample_clip(frames: usize, width: usize, height: usize) -> VideoFrames {
    let scene = Scene::new(&CONTENT_PALETTES[0], 3000);
    let frames = (0..frames).map(|t| scene.render(width, height, t)).collect();
    VideoFrames::new(frames, DEFAULT_FRAME_RATE).expect("non-empty clip of equal-sized frames")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = content_image(2, 40, 30);
        assert_eq!(a, content_image(2, 40, 30));
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_ne!(a, style_image(2, 40, 30));
    }

    #[test]
    fn clip_frames_differ_slightly() {
        let clip = sample_clip(3, 32, 32);
        let f = clip.frames();
        let diff: f32 = f[0].data().iter().zip(f[1].data()).map(|(a, b)| (a - b).abs()).sum::<f32>()
            / f[0].data().len() as f32;
        assert!(diff > 0.0 && diff < 0.05, "{diff}");
    }
}
