//! Raster containers, PNG/JPEG IO, bilinear resampling and luma.
//!
//! Pixels are stored as interleaved `f32` RGB in `[0, 1]`. Values are treated
//! as display-encoded (sRGB) and graded directly; there is no linearisation.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Rgb};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rec. 709 luma weights.
pub const LUMA_WEIGHTS: [f32; 3] = [0.2126, 0.7152, 0.0722];

pub const DEFAULT_FRAME_RATE: f32 = 25.0;

const MANIFEST_NAME: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Contract(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height * 3 {
            return Err(Error::Contract(format!(
                "expected {} samples for {width}x{height} RGB, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Constant-colour image.
    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// Builds an image from 8-bit RGBA bytes (alpha ignored).
    pub fn from_rgba8(width: usize, height: usize, rgba: &[u8]) -> Result<Self> {
        if rgba.len() != width * height * 4 {
            return Err(Error::Contract(format!(
                "expected {} RGBA bytes, got {}",
                width * height * 4,
                rgba.len()
            )));
        }
        let data = rgba
            .chunks_exact(4)
            .flat_map(|px| px[..3].iter().map(|&b| b as f32 / 255.0))
            .collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f32; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    pub fn same_size(&self, other: &RgbImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn clamp(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// 8-bit quantisation, `round(v * 255)`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize8(v)).collect()
    }

    pub fn to_rgba8(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.pixel_count() * 4);
        for px in self.data.chunks_exact(3) {
            out.extend(px.iter().map(|&v| quantize8(v)));
            out.push(255);
        }
        out
    }

    /// Encodes as an 8-bit PNG with fixed encoder settings; identical images
    /// produce identical bytes.
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.to_rgb8())
                .expect("buffer length matches dimensions");
        let mut out = Vec::new();
        let encoder = image::codecs::png::PngEncoder::new_with_quality(
            &mut out,
            image::codecs::png::CompressionType::Fast,
            image::codecs::png::FilterType::Sub,
        );
        buf.write_with_encoder(encoder).map_err(|e| Error::Format {
            path: PathBuf::from("<memory>"),
            message: e.to_string(),
        })?;
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes).map_err(|e| Error::Format {
            path: PathBuf::from("<memory>"),
            message: e.to_string(),
        })?;
        Ok(from_dynamic(img))
    }
}

pub fn quantize8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn from_dynamic(img: DynamicImage) -> RgbImage {
    // to_rgb32f scales 8-bit sources by 1/255 and 16-bit sources by 1/65535.
    let rgb = img.to_rgb32f();
    let (w, h) = rgb.dimensions();
    RgbImage {
        width: w as usize,
        height: h as usize,
        data: rgb.into_raw(),
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory(&bytes).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(from_dynamic(img))
}

/// Writes a PNG, creating missing parent directories.
pub fn save_image(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let bytes = img.encode_png()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Bilinear resampling with pixel-centre alignment and edge clamping.
pub fn resize(img: &RgbImage, height: usize, width: usize) -> RgbImage {
    assert!(height > 0 && width > 0, "resize target must be positive");
    if height == img.height && width == img.width {
        return img.clone();
    }
    let xs = axis_taps(img.width, width);
    let ys = axis_taps(img.height, height);
    let mut data = Vec::with_capacity(width * height * 3);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let p00 = img.pixel(x0, y0);
            let p10 = img.pixel(x1, y0);
            let p01 = img.pixel(x0, y1);
            let p11 = img.pixel(x1, y1);
            for c in 0..3 {
                let top = p00[c] * (1.0 - fx) + p10[c] * fx;
                let bottom = p01[c] * (1.0 - fx) + p11[c] * fx;
                data.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0));
            }
        }
    }
    RgbImage {
        width,
        height,
        data,
    }
}

fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, (s - i0 as f64) as f32)
        })
        .collect()
}

#[inline]
pub fn luma(rgb: [f32; 3]) -> f32 {
    LUMA_WEIGHTS[0] * rgb[0] + LUMA_WEIGHTS[1] * rgb[1] + LUMA_WEIGHTS[2] * rgb[2]
}

/// Per-pixel Rec. 709 luma, row-major `H*W`.
pub fn luminance(img: &RgbImage) -> Vec<f32> {
    img.pixels().map(luma).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoFrames {
    frames: Vec<RgbImage>,
    frame_rate: f32,
}

#[derive(Debug, Serialize, Deserialize)]
struct FrameManifest {
    frame_rate: f32,
    frame_count: usize,
    width: usize,
    height: usize,
    pattern: String,
}

impl VideoFrames {
    pub fn new(frames: Vec<RgbImage>, frame_rate: f32) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::Contract("video must contain at least one frame".into()));
        };
        if let Some((i, _)) = frames.iter().enumerate().find(|(_, f)| !f.same_size(first)) {
            return Err(Error::Contract(format!(
                "frame {i} is {}x{}, expected {}x{}",
                frames[i].width(),
                frames[i].height(),
                first.width(),
                first.height()
            )));
        }
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(Error::Contract(format!("invalid frame rate {frame_rate}")));
        }
        Ok(Self { frames, frame_rate })
    }

    pub fn frames(&self) -> &[RgbImage] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<RgbImage> {
        self.frames
    }

    pub fn frame_rate(&self) -> f32 {
        self.frame_rate
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.png")
}

/// Reads `frame_%06d.png` files from `dir` in index order. The frame rate
/// comes from `manifest.json` when present.
pub fn read_frames(dir: impl AsRef<Path>) -> Result<VideoFrames> {
    let dir = dir.as_ref();
    let mut entries: Vec<(usize, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if let Some(idx) = name
            .strip_prefix("frame_")
            .and_then(|s| s.strip_suffix(".png"))
            .and_then(|s| s.parse::<usize>().ok())
        {
            entries.push((idx, entry.path()));
        }
    }
    entries.sort();
    if entries.is_empty() {
        return Err(Error::Contract(format!(
            "no frame_NNNNNN.png files in {}",
            dir.display()
        )));
    }
    let frame_rate = match fs::read_to_string(dir.join(MANIFEST_NAME)) {
        Ok(text) => serde_json::from_str::<FrameManifest>(&text)?.frame_rate,
        Err(_) => DEFAULT_FRAME_RATE,
    };
    let frames = entries
        .iter()
        .map(|(_, p)| load_image(p))
        .collect::<Result<Vec<_>>>()?;
    VideoFrames::new(frames, frame_rate)
}

/// Writes frames as `frame_%06d.png` plus a `manifest.json`.
pub fn write_frames(video: &VideoFrames, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, frame) in video.frames().iter().enumerate() {
        save_image(frame, dir.join(frame_file_name(i)))?;
    }
    let manifest = FrameManifest {
        frame_rate: video.frame_rate(),
        frame_count: video.len(),
        width: video.width(),
        height: video.height(),
        pattern: "frame_%06d.png".into(),
    };
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    #[test]
    fn load_scales_8bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("red.png");
        let buf: ImageBuffer<Rgb<u8>, _> = ImageBuffer::from_raw(2, 2, [255u8, 0, 0].repeat(4)).unwrap();
        buf.save(&path).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!((img.width(), img.height()), (2, 2));
        assert!(img.pixels().all(|p| p == [1.0, 0.0, 0.0]));

        let path = dir.path().join("black.png");
        let buf: ImageBuffer<Rgb<u8>, _> = ImageBuffer::from_raw(1, 1, vec![0u8; 3]).unwrap();
        buf.save(&path).unwrap();
        assert_eq!(load_image(&path).unwrap().pixel(0, 0), [0.0; 3]);

        let path = dir.path().join("gray.png");
        let buf: image::GrayImage = ImageBuffer::from_raw(1, 1, vec![128u8]).unwrap();
        buf.save(&path).unwrap();
        let v = load_image(&path).unwrap().pixel(0, 0);
        assert!((v[0] - 0.501_96).abs() < 1e-5);
    }

    #[test]
    fn load_scales_16bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deep.png");
        let buf: ImageBuffer<Rgb<u16>, _> =
            ImageBuffer::from_raw(1, 1, vec![65535u16, 32768, 0]).unwrap();
        buf.save(&path).unwrap();
        let v = load_image(&path).unwrap().pixel(0, 0);
        assert_eq!(v[0], 1.0);
        assert!((v[1] - 32768.0 / 65535.0).abs() < 1e-7);
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_image(dir.path().join("missing.png")),
            Err(Error::Io { .. })
        ));
        let junk = dir.path().join("junk.png");
        fs::write(&junk, b"not an image").unwrap();
        assert!(matches!(load_image(&junk), Err(Error::Format { .. })));
    }

    #[test]
    fn save_load_round_trip_within_half_step() {
        let dir = tempfile::tempdir().unwrap();
        let img = random_image(7, 5, 3);
        let path = dir.path().join("rt.png");
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 510.0 + 1e-7);
        }
    }

    #[test]
    fn resize_constant_and_identity() {
        let img = RgbImage::filled(5, 3, [0.3, 0.3, 0.3]);
        let out = resize(&img, 7, 11);
        assert!(out.data().iter().all(|&v| (v - 0.3).abs() < 1e-6));
        let r = random_image(6, 4, 1);
        assert_eq!(resize(&r, 4, 6), r);
    }

    #[test]
    fn resize_checkerboard_to_single_pixel() {
        let img = RgbImage::new(2, 2, [0.0, 1.0, 1.0, 0.0].iter().flat_map(|&v| [v; 3]).collect())
            .unwrap();
        // Hand-computed: the 1x1 centre maps to source (0.5, 0.5), equal weights.
        let out = resize(&img, 1, 1);
        assert_eq!(out.pixel(0, 0), [0.5; 3]);
    }

    #[test]
    fn resize_matches_hand_oracle() {
        // 4 -> 2 on one axis: centres at 0.5 and 2.5 in source coordinates.
        let img = RgbImage::new(4, 1, [0.0, 0.2, 0.6, 1.0].iter().flat_map(|&v| [v; 3]).collect())
            .unwrap();
        let out = resize(&img, 1, 2);
        assert!((out.pixel(0, 0)[0] - 0.1).abs() < 1e-6);
        assert!((out.pixel(1, 0)[0] - 0.8).abs() < 1e-6);
    }

    #[test]
    fn luminance_values() {
        assert!((luma([1.0, 1.0, 1.0]) - 1.0).abs() < 1e-6);
        assert_eq!(luma([1.0, 0.0, 0.0]), 0.2126);
        let img = random_image(3, 3, 9);
        let map = luminance(&img);
        for y in 0..3 {
            for x in 0..3 {
                let p = img.pixel(x, y);
                let expect = 0.2126 * p[0] + 0.7152 * p[1] + 0.0722 * p[2];
                assert!((map[y * 3 + x] - expect).abs() < 1e-7);
                assert!((0.0..=1.0).contains(&map[y * 3 + x]));
            }
        }
    }

    #[test]
    fn video_rejects_mixed_sizes() {
        let a = RgbImage::filled(2, 2, [0.0; 3]);
        let b = RgbImage::filled(3, 2, [0.0; 3]);
        assert!(VideoFrames::new(vec![a, b], 25.0).is_err());
        assert!(VideoFrames::new(vec![], 25.0).is_err());
    }

    #[test]
    fn frame_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<_> = (0..3).map(|i| random_image(4, 3, i)).collect();
        let video = VideoFrames::new(frames, 30.0).unwrap();
        write_frames(&video, dir.path()).unwrap();
        assert!(dir.path().join("frame_000002.png").exists());
        let back = read_frames(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back.frame_rate(), 30.0);
    }

    proptest::proptest! {
        #[test]
        fn resize_stays_in_unit_range(w in 1usize..9, h in 1usize..9, tw in 1usize..12, th in 1usize..12, seed in 0u64..1000) {
            let out = resize(&random_image(w, h, seed), th, tw);
            proptest::prop_assert_eq!((out.width(), out.height()), (tw, th));
            proptest::prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
