//! Browser bindings: grade a canvas buffer, measure its colour histogram and
//! bake the current grade into a `.cube` file, all client-side.

use paramgrade::color_ops::{apply_params, GradingParams, PARAM_NAMES, PARAM_RANGES};
use paramgrade::losses::soft_histogram;
use paramgrade::lut::{bake_lut, to_cube_string};
use paramgrade::RgbImage;
use wasm_bindgen::prelude::*;

fn params(json: &str) -> Result<GradingParams, JsError> {
    GradingParams::from_json(json).map_err(|e| JsError::new(&e.to_string()))
}

fn image(rgba: &[u8], width: usize, height: usize) -> Result<RgbImage, JsError> {
    RgbImage::from_rgba8(width, height, rgba).map_err(|e| JsError::new(&e.to_string()))
}

/// Names, ranges and identity values as JSON, for building sliders.
#[wasm_bindgen]
pub fn param_schema() -> String {
    let rows: Vec<String> = PARAM_NAMES
        .iter()
        .zip(PARAM_RANGES)
        .map(|(n, r)| {
            format!(
                r#"{{"name":"{n}","min":{},"max":{},"identity":{}}}"#,
                r.min, r.max, r.identity
            )
        })
        .collect();
    format!("[{}]", rows.join(","))
}

/// Applies a grade (GradingParams JSON) to canvas `ImageData` bytes.
/// Alpha is passed through.
#[wasm_bindgen]
pub fn grade_rgba(rgba: &[u8], width: usize, height: usize, params_json: &str) -> Result<Vec<u8>, JsError> {
    let p = params(params_json)?;
    let graded = apply_params(&image(rgba, width, height)?, &p).to_rgba8();
    let mut out = graded;
    for (o, i) in out.chunks_exact_mut(4).zip(rgba.chunks_exact(4)) {
        o[3] = i[3];
    }
    Ok(out)
}

/// Normalised soft histogram, `3 * bins` values, red row first.
#[wasm_bindgen]
pub fn histogram_rgba(rgba: &[u8], width: usize, height: usize, bins: usize) -> Result<Vec<f32>, JsError> {
    if bins < 2 {
        return Err(JsError::new("need at least two bins"));
    }
    let h = soft_histogram(&image(rgba, width, height)?, bins);
    Ok(h.bins().iter().map(|&v| v as f32).collect())
}

/// `.cube` text for the grade; sharpness is not representable and ignored.
#[wasm_bindgen]
pub fn bake_cube(params_json: &str, size: usize) -> Result<String, JsError> {
    let lut = bake_lut(&params(params_json)?, size).map_err(|e| JsError::new(&e.to_string()))?;
    Ok(to_cube_string(&lut, "paramgrade"))
}
