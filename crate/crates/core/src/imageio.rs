//! Grayscale images, binary PGM I/O and synthetic stereo pairs.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, PgmError, Result};
use crate::rng::{self, Stage};

/// Row-major grayscale intensity field.
///
/// Values loaded from disk lie in `[0, 1]`; arithmetic (noise, scaling) may
/// move them outside that range.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::arg(format!("image dimensions must be positive, got {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::arg(format!(
                "image data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::arg(format!("non-finite intensity at index {i}")));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Intensity at column `x`, row `y`.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    /// Copies the `width x height` window whose top-left corner is `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, width: usize, height: usize) -> Result<GrayImage> {
        if width == 0 || height == 0 || x + width > self.width || y + height > self.height {
            return Err(Error::arg(format!(
                "crop {width}x{height} at ({x},{y}) exceeds {}x{} image",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(width * height);
        for row in y..y + height {
            data.extend_from_slice(&self.row(row)[x..x + width]);
        }
        Ok(GrayImage { width, height, data })
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Reads a binary (P5) PGM with maxval 255 or 65535 and normalizes by maxval.
pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    decode_pgm(&bytes).map_err(|source| Error::Pgm { path: path.to_path_buf(), source })
}

/// Writes `image` as P5 with the given maxval, clamping to `[0, 1]` and
/// rounding half up. `comments` become `#` lines after the magic number.
pub fn save_pgm(image: &GrayImage, path: impl AsRef<Path>, maxval: u32, comments: &[String]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pgm(image, maxval, comments)?;
    let mut file = fs::File::create(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    file.write_all(&bytes)
        .map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn quantize(value: f64, maxval: u32) -> u32 {
    let m = maxval as f64;
    (value.clamp(0.0, 1.0) * m + 0.5).floor().min(m) as u32
}

pub fn encode_pgm(image: &GrayImage, maxval: u32, comments: &[String]) -> Result<Vec<u8>> {
    if maxval != 255 && maxval != 65535 {
        return Err(Error::arg(format!("maxval must be 255 or 65535, got {maxval}")));
    }
    let mut out = Vec::with_capacity(image.data.len() * 2 + 64);
    out.extend_from_slice(b"P5\n");
    for c in comments {
        for line in c.lines() {
            out.extend_from_slice(b"# ");
            out.extend_from_slice(line.as_bytes());
            out.push(b'\n');
        }
    }
    out.extend_from_slice(format!("{} {}\n{}\n", image.width, image.height, maxval).as_bytes());
    for &v in &image.data {
        let q = quantize(v, maxval);
        if maxval == 255 {
            out.push(q as u8);
        } else {
            out.extend_from_slice(&(q as u16).to_be_bytes());
        }
    }
    Ok(out)
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, field: &'static str) -> std::result::Result<u32, PgmError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(PgmError::MalformedHeader { field, detail: "expected a decimal integer".into() });
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        text.parse()
            .map_err(|e| PgmError::MalformedHeader { field, detail: format!("{e}") })
    }
}

pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<GrayImage, PgmError> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        let magic = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(PgmError::UnsupportedFormat(magic));
    }
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 {
        return Err(PgmError::MalformedHeader { field: "width", detail: "must be positive".into() });
    }
    if height == 0 {
        return Err(PgmError::MalformedHeader { field: "height", detail: "must be positive".into() });
    }
    if maxval != 255 && maxval != 65535 {
        return Err(PgmError::UnsupportedMaxval(maxval));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => {
            return Err(PgmError::MalformedHeader {
                field: "maxval",
                detail: "missing whitespace before raster".into(),
            })
        }
    }
    let (w, h) = (width as usize, height as usize);
    let sample_bytes = if maxval == 255 { 1 } else { 2 };
    let expected = w * h * sample_bytes;
    let payload = &bytes[cur.pos..];
    if payload.len() < expected {
        return Err(PgmError::Truncated { expected, found: payload.len() });
    }
    let scale = maxval as f64;
    let data: Vec<f64> = if sample_bytes == 1 {
        payload[..expected].iter().map(|&b| b as f64 / scale).collect()
    } else {
        payload[..expected]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale)
            .collect()
    };
    Ok(GrayImage { width: w, height: h, data })
}

/// Rectangle of the template frame carrying one ground-truth shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
    pub du: i32,
    pub dv: i32,
}

impl Region {
    fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x0 + self.width && y >= self.y0 && y < self.y0 + self.height
    }
}

/// Parameters of a synthetic stereo pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub width: usize,
    pub height: usize,
    /// Piecewise-constant ground truth; must tile the image exactly.
    pub regions: Vec<Region>,
    pub texture_seed: u64,
    /// Standard deviation of Gaussian noise added to the template.
    pub noise_floor: f64,
}

impl SyntheticSpec {
    pub fn uniform(width: usize, height: usize, du: i32, dv: i32, texture_seed: u64, noise_floor: f64) -> Self {
        Self {
            width,
            height,
            regions: vec![Region { x0: 0, y0: 0, width, height, du, dv }],
            texture_seed,
            noise_floor,
        }
    }

    /// Four quadrants split at the image center, in order top-left,
    /// top-right, bottom-left, bottom-right.
    pub fn quadrants(width: usize, height: usize, shifts: [(i32, i32); 4], texture_seed: u64, noise_floor: f64) -> Self {
        let (hw, hh) = (width / 2, height / 2);
        let rects = [
            (0, 0, hw, hh),
            (hw, 0, width - hw, hh),
            (0, hh, hw, height - hh),
            (hw, hh, width - hw, height - hh),
        ];
        let regions = rects
            .iter()
            .zip(shifts)
            .map(|(&(x0, y0, w, h), (du, dv))| Region { x0, y0, width: w, height: h, du, dv })
            .collect();
        Self { width, height, regions, texture_seed, noise_floor }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Spec("dimensions must be positive".into()));
        }
        if !(self.noise_floor.is_finite() && self.noise_floor >= 0.0) {
            return Err(Error::Spec(format!("noise_floor must be finite and >= 0, got {}", self.noise_floor)));
        }
        let bound = (self.width.min(self.height) / 4) as i32;
        let mut coverage = vec![0u8; self.width * self.height];
        for r in &self.regions {
            if r.du.abs() > bound || r.dv.abs() > bound {
                return Err(Error::Spec(format!(
                    "disparity ({},{}) exceeds bound {bound}",
                    r.du, r.dv
                )));
            }
            if r.width == 0 || r.height == 0 || r.x0 + r.width > self.width || r.y0 + r.height > self.height {
                return Err(Error::Spec(format!("region at ({},{}) lies outside the image", r.x0, r.y0)));
            }
            for y in r.y0..r.y0 + r.height {
                for c in &mut coverage[y * self.width + r.x0..y * self.width + r.x0 + r.width] {
                    *c = c.saturating_add(1);
                }
            }
        }
        if let Some(i) = coverage.iter().position(|&c| c != 1) {
            return Err(Error::Spec(format!(
                "regions do not tile the image exactly at pixel ({},{})",
                i % self.width,
                i / self.width
            )));
        }
        Ok(())
    }
}

/// Ground-truth shifts of a synthetic pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionTruth {
    pub regions: Vec<Region>,
}

impl RegionTruth {
    /// Shift `(du, dv)` of the region containing pixel `(x, y)`.
    pub fn at(&self, x: usize, y: usize) -> Option<(i32, i32)> {
        self.regions.iter().find(|r| r.contains(x, y)).map(|r| (r.du, r.dv))
    }
}

/// Synthetic pair: `template(x, y) = reference(x + du, y + dv)` inside each
/// region, plus Gaussian noise of standard deviation `noise_floor`.
#[derive(Debug, Clone)]
pub struct StereoPair {
    pub template: GrayImage,
    pub reference: GrayImage,
    pub truth: RegionTruth,
}

const BOX: usize = 5;

/// Builds a pair from a box-blurred uniform-noise texture.
///
/// The texture canvas is padded by the largest shift so every template
/// pixel is an exact copy of a texture sample, including near the borders.
pub fn make_synthetic_stereo(spec: &SyntheticSpec) -> Result<StereoPair> {
    spec.validate()?;
    let pad = spec
        .regions
        .iter()
        .map(|r| r.du.unsigned_abs().max(r.dv.unsigned_abs()) as usize)
        .max()
        .unwrap_or(0);
    let cw = spec.width + 2 * pad;
    let ch = spec.height + 2 * pad;
    let canvas = box_blurred_texture(cw, ch, spec.texture_seed);

    let reference = GrayImage::from_fn(spec.width, spec.height, |x, y| canvas[(y + pad) * cw + x + pad])?;

    let mut noise = rng::stream(spec.texture_seed, Stage::SensorNoise, 0);
    let mut data = Vec::with_capacity(spec.width * spec.height);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let r = spec.regions.iter().find(|r| r.contains(x, y)).expect("validated tiling");
            let cx = (x + pad) as i64 + r.du as i64;
            let cy = (y + pad) as i64 + r.dv as i64;
            let mut v = canvas[cy as usize * cw + cx as usize];
            if spec.noise_floor > 0.0 {
                let g: f64 = noise.sample(StandardNormal);
                v += spec.noise_floor * g;
            }
            data.push(v);
        }
    }
    let template = GrayImage::new(spec.width, spec.height, data)?;
    Ok(StereoPair { template, reference, truth: RegionTruth { regions: spec.regions.clone() } })
}

/// Uniform noise blurred by a `BOX x BOX` mean filter and rescaled to `[0, 1]`.
fn box_blurred_texture(width: usize, height: usize, seed: u64) -> Vec<f64> {
    let (nw, nh) = (width + BOX - 1, height + BOX - 1);
    let mut rng = rng::stream(seed, Stage::Texture, 0);
    let raw: Vec<f64> = (0..nw * nh).map(|_| rng.random::<f64>()).collect();

    // horizontal then vertical running sums, valid region only
    let mut horiz = vec![0.0; width * nh];
    for y in 0..nh {
        let row = &raw[y * nw..(y + 1) * nw];
        for x in 0..width {
            horiz[y * width + x] = row[x..x + BOX].iter().sum();
        }
    }
    let mut out = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            out[y * width + x] = (0..BOX).map(|k| horiz[(y + k) * width + x]).sum::<f64>();
        }
    }
    let lo = out.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    for v in &mut out {
        *v = if span > 0.0 { (*v - lo) / span } else { 0.5 };
    }
    out
}
