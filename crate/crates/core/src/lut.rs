//! Baking grading parameters into a 3D LUT, `.cube` IO and a reference
//! trilinear applier.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::color_ops::{GradingParams, PointwiseGrade};
use crate::error::{Error, Result};
use crate::imaging::RgbImage;

pub const DEFAULT_LUT_SIZE: usize = 33;
pub const MIN_LUT_SIZE: usize = 2;
pub const MAX_BAKE_SIZE: usize = 129;
pub const MAX_CUBE_SIZE: usize = 256;

/// `n^3` RGB entries, red index fastest, then green, then blue.
#[derive(Clone, Debug, PartialEq)]
pub struct Lut3D {
    n: usize,
    table: Vec<[f64; 3]>,
}

impl Lut3D {
    pub fn new(n: usize, table: Vec<[f64; 3]>) -> Result<Self> {
        if n < MIN_LUT_SIZE {
            return Err(Error::Contract(format!("LUT size {n} is below {MIN_LUT_SIZE}")));
        }
        if table.len() != n * n * n {
            return Err(Error::Contract(format!(
                "LUT of size {n} needs {} entries, got {}",
                n * n * n,
                table.len()
            )));
        }
        if let Some(bad) = table.iter().find(|e| e.iter().any(|v| !(0.0..=1.0).contains(v))) {
            return Err(Error::Contract(format!("LUT entry {bad:?} outside [0,1]")));
        }
        Ok(Self { n, table })
    }

    pub fn identity(n: usize) -> Self {
        bake_lut(&GradingParams::IDENTITY, n).expect("valid size")
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[[f64; 3]] {
        &self.table
    }

    #[inline]
    pub fn index(&self, r: usize, g: usize, b: usize) -> usize {
        r + self.n * (g + self.n * b)
    }

    pub fn get(&self, r: usize, g: usize, b: usize) -> [f64; 3] {
        self.table[self.index(r, g, b)]
    }

    /// Trilinear lookup of one colour.
    pub fn sample(&self, rgb: [f32; 3]) -> [f32; 3] {
        let max = (self.n - 1) as f64;
        let mut i0 = [0usize; 3];
        let mut f = [0.0f64; 3];
        for c in 0..3 {
            let mut x = rgb[c].clamp(0.0, 1.0) as f64 * max;
            let nearest = x.round();
            if (x - nearest).abs() < 1e-4 {
                x = nearest;
            }
            let base = (x.floor() as usize).min(self.n - 2);
            i0[c] = base;
            f[c] = x - base as f64;
        }
        let mut out = [0.0f64; 3];
        for (corner, weight) in (0..8).map(|k| {
            let (dr, dg, db) = (k & 1, (k >> 1) & 1, (k >> 2) & 1);
            let w = (if dr == 1 { f[0] } else { 1.0 - f[0] })
                * (if dg == 1 { f[1] } else { 1.0 - f[1] })
                * (if db == 1 { f[2] } else { 1.0 - f[2] });
            (self.get(i0[0] + dr, i0[1] + dg, i0[2] + db), w)
        }) {
            if weight == 0.0 {
                continue;
            }
            for c in 0..3 {
                out[c] += weight * corner[c];
            }
        }
        out.map(|v| v.clamp(0.0, 1.0) as f32)
    }
}

/// Samples the pointwise grade on an `n^3` lattice over `[0,1]^3`.
///
/// Lattice values are `i / (n - 1)` so both 0 and 1 are sampled; the literal
/// `i * 255 / N` scaling of the original LUT-conversion loop never reaches
/// full white and would leave the top cell extrapolated. Loop nesting (blue
/// outer, red inner) and the red-fastest index match that loop. Sharpness is
/// spatial and cannot be baked.
pub fn bake_lut(p: &GradingParams, n: usize) -> Result<Lut3D> {
    if !(MIN_LUT_SIZE..=MAX_BAKE_SIZE).contains(&n) {
        return Err(Error::Contract(format!(
            "LUT size {n} outside {MIN_LUT_SIZE}..={MAX_BAKE_SIZE}"
        )));
    }
    let op = PointwiseGrade::new(p);
    let step = 1.0 / (n - 1) as f32;
    let mut table = Vec::with_capacity(n * n * n);
    for b in 0..n {
        for g in 0..n {
            for r in 0..n {
                table.push(op.apply([r as f32 * step, g as f32 * step, b as f32 * step]).map(f64::from));
            }
        }
    }
    Ok(Lut3D { n, table })
}

pub fn apply_lut(img: &RgbImage, lut: &Lut3D) -> RgbImage {
    let mut out = img.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        let v = lut.sample([px[0], px[1], px[2]]);
        px.copy_from_slice(&v);
    }
    out
}

pub fn to_cube_string(lut: &Lut3D, title: &str) -> String {
    let mut s = String::with_capacity(lut.table.len() * 28 + 128);
    let title = title.replace('"', "'");
    writeln!(s, "TITLE \"{title}\"").unwrap();
    writeln!(s, "LUT_3D_SIZE {}", lut.n).unwrap();
    s.push_str("DOMAIN_MIN 0.0 0.0 0.0\n");
    s.push_str("DOMAIN_MAX 1.0 1.0 1.0\n");
    for e in &lut.table {
        writeln!(s, "{:.6} {:.6} {:.6}", e[0], e[1], e[2]).unwrap();
    }
    s
}

pub fn write_cube(lut: &Lut3D, path: impl AsRef<Path>, title: &str) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_cube_string(lut, title)).map_err(|e| Error::io(path, e))
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<Lut3D> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cube(&text, path)
}

fn parse_triple(parts: &[&str], path: &Path, line: usize, what: &str) -> Result<[f64; 3]> {
    let err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    if parts.len() != 3 {
        return Err(err(format!("{what}: expected 3 values, found {}", parts.len())));
    }
    let mut out = [0.0f64; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| err(format!("{what}: `{p}` is not a number")))?;
    }
    Ok(out)
}

/// Parses `.cube` text. Only 3D tables over the unit domain are accepted.
pub fn parse_cube(text: &str, source: impl Into<PathBuf>) -> Result<Lut3D> {
    let path: PathBuf = source.into();
    let err = |line: usize, message: String| Error::Parse {
        path: path.clone(),
        line,
        message,
    };
    let mut size: Option<usize> = None;
    let mut table: Vec<[f64; 3]> = Vec::new();
    let mut last_line = 0;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        last_line = line_no;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let first = line.split_whitespace().next().expect("non-empty line");
        let starts_numeric = first.starts_with(|c: char| c.is_ascii_digit() || c == '-' || c == '+' || c == '.');
        if starts_numeric {
            let Some(n) = size else {
                return Err(err(line_no, "table data before LUT_3D_SIZE".into()));
            };
            let parts: Vec<&str> = line.split_whitespace().collect();
            let v = parse_triple(&parts, &path, line_no, "entry")?;
            if v.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(err(line_no, format!("entry {v:?} outside the [0,1] domain")));
            }
            if table.len() == n * n * n {
                return Err(err(line_no, format!("more than {} entries for LUT_3D_SIZE {n}", n * n * n)));
            }
            table.push(v);
            continue;
        }
        if !table.is_empty() {
            return Err(err(line_no, format!("keyword `{first}` after table data")));
        }
        let rest: Vec<&str> = line.split_whitespace().skip(1).collect();
        match first {
            "TITLE" => {}
            "LUT_3D_SIZE" => {
                if size.is_some() {
                    return Err(err(line_no, "duplicate LUT_3D_SIZE".into()));
                }
                let n = rest
                    .first()
                    .filter(|_| rest.len() == 1)
                    .and_then(|s| s.parse::<usize>().ok())
                    .ok_or_else(|| err(line_no, "LUT_3D_SIZE needs one integer".into()))?;
                if !(MIN_LUT_SIZE..=MAX_CUBE_SIZE).contains(&n) {
                    return Err(err(line_no, format!("LUT_3D_SIZE {n} outside {MIN_LUT_SIZE}..={MAX_CUBE_SIZE}")));
                }
                size = Some(n);
                table.reserve(n * n * n);
            }
            "DOMAIN_MIN" | "DOMAIN_MAX" => {
                let v = parse_triple(&rest, &path, line_no, first)?;
                let expect = if first == "DOMAIN_MIN" { 0.0 } else { 1.0 };
                if v != [expect; 3] {
                    return Err(err(line_no, format!("{first} {v:?} unsupported; only the unit domain is accepted")));
                }
            }
            "LUT_1D_SIZE" | "LUT_1D_INPUT_RANGE" | "LUT_3D_INPUT_RANGE" => {
                return Err(err(line_no, format!("`{first}` is not supported")));
            }
            other => return Err(err(line_no, format!("unknown keyword `{other}`"))),
        }
    }
    let Some(n) = size else {
        return Err(err(last_line.max(1), "missing LUT_3D_SIZE".into()));
    };
    if table.len() != n * n * n {
        return Err(err(
            last_line,
            format!(
                "expected {} entries for LUT_3D_SIZE {n}, found {} ({} missing)",
                n * n * n,
                table.len(),
                n * n * n - table.len()
            ),
        ));
    }
    Ok(Lut3D { n, table })
}
