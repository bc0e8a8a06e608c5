//! Block-wise stereo alignment: partitioning, disparity estimation,
//! gap filling, dense interpolation, warping and correlation metrics.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::Uniform;
use rayon::prelude::*;

use crate::diag::{build_diag_tables, ncc_diag, ncc_diag_fast, Orientation};
use crate::error::{Error, Result};
use crate::imageio::{GrayImage, RegionTruth};
use crate::ncc::{best_shift, build_sum_tables, ncc_full_fast, ncc_full_naive, OpCount, ShiftRange, EPS_VAR};
use crate::rng::{self, Stage};
use crate::stream::{ncc_stream, MovingAverageConfig, NoiseModel};

/// Largest total crop fraction accepted by [`partition_template`].
pub const MAX_CROP_FRACTION: f64 = 0.10;

/// Regular lattice of square blocks inside the cropped template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockGrid {
    pub block_size: usize,
    pub crop_margin_x: usize,
    pub crop_margin_y: usize,
    pub rows: usize,
    pub cols: usize,
    /// Top-left `(x, y)` of each block in the uncropped frame, row-major.
    pub origins: Vec<(usize, usize)>,
}

impl BlockGrid {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn origin(&self, row: usize, col: usize) -> (usize, usize) {
        self.origins[row * self.cols + col]
    }

    /// Pixel at the center of block `(row, col)`.
    pub fn center(&self, row: usize, col: usize) -> (usize, usize) {
        let (x, y) = self.origin(row, col);
        (x + self.block_size / 2, y + self.block_size / 2)
    }
}

/// Crops `floor(crop_fraction / 2 * dimension)` pixels from each side and
/// tiles the rest with whole blocks from its top-left corner.
pub fn partition_template(image: &GrayImage, block_size: usize, crop_fraction: f64) -> Result<BlockGrid> {
    if !(0.0..=MAX_CROP_FRACTION + 1e-12).contains(&crop_fraction) {
        return Err(Error::arg(format!("crop fraction must be in [0, {MAX_CROP_FRACTION}], got {crop_fraction}")));
    }
    if block_size < 8 {
        return Err(Error::arg(format!("block size must be >= 8, got {block_size}")));
    }
    // the small epsilon absorbs representation error, e.g. 0.05 * 1080
    let margin = |dim: usize| (crop_fraction / 2.0 * dim as f64 + 1e-9).floor() as usize;
    let (mx, my) = (margin(image.width()), margin(image.height()));
    let cw = image.width() - 2 * mx;
    let ch = image.height() - 2 * my;
    let (cols, rows) = (cw / block_size, ch / block_size);
    if rows == 0 || cols == 0 {
        return Err(Error::arg(format!(
            "cropped region {cw}x{ch} is smaller than one {block_size}x{block_size} block"
        )));
    }
    let origins = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (mx + c * block_size, my + r * block_size)))
        .collect();
    Ok(BlockGrid { block_size, crop_margin_x: mx, crop_margin_y: my, rows, cols, origins })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    Full,
    FullFast,
    #[default]
    Diag,
    DiagFast,
    Stream,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Full, Method::FullFast, Method::Diag, Method::DiagFast, Method::Stream];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Full => "full",
            Method::FullFast => "full-fast",
            Method::Diag => "diag",
            Method::DiagFast => "diag-fast",
            Method::Stream => "stream",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::arg(format!("unknown method {s:?}, expected full|full-fast|diag|diag-fast|stream")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateOptions {
    pub method: Method,
    pub range: ShiftRange,
    pub orientation: Orientation,
    /// `None` selects a boxcar as long as the block side.
    pub moving_average: Option<MovingAverageConfig>,
    pub noise: NoiseModel,
}

impl EstimateOptions {
    pub fn new(method: Method, range: ShiftRange) -> Self {
        Self { method, range, orientation: Orientation::Main, moving_average: None, noise: NoiseModel::noiseless() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockStatus {
    Valid,
    Interpolated,
    Invalid,
}

impl BlockStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            BlockStatus::Valid => "valid",
            BlockStatus::Interpolated => "interpolated",
            BlockStatus::Invalid => "invalid",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisparityEntry {
    pub du: f64,
    pub dv: f64,
    /// NaN unless the entry was measured.
    pub coeff: f64,
    pub status: BlockStatus,
}

impl DisparityEntry {
    const INVALID: DisparityEntry = DisparityEntry { du: 0.0, dv: 0.0, coeff: f64::NAN, status: BlockStatus::Invalid };
}

/// Per-block disparities, row-major over the [`BlockGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityField {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<DisparityEntry>,
}

impl DisparityField {
    pub fn get(&self, row: usize, col: usize) -> &DisparityEntry {
        &self.entries[row * self.cols + col]
    }

    /// Same decisions and bit-identical coefficients.
    pub fn bit_identical(&self, other: &DisparityField) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.du.to_bits() == b.du.to_bits()
                    && a.dv.to_bits() == b.dv.to_bits()
                    && a.coeff.to_bits() == b.coeff.to_bits()
                    && a.status == b.status
            })
    }

    pub fn same_shifts(&self, other: &DisparityField) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.du == b.du && a.dv == b.dv && a.status == b.status)
    }
}

pub fn estimate_disparity(template: &GrayImage, reference: &GrayImage, grid: &BlockGrid, options: &EstimateOptions) -> Result<DisparityField> {
    estimate_disparity_counted(template, reference, grid, options).map(|(f, _)| f)
}

/// [`estimate_disparity`] plus the summed operation counters of all blocks.
pub fn estimate_disparity_counted(
    template: &GrayImage,
    reference: &GrayImage,
    grid: &BlockGrid,
    options: &EstimateOptions,
) -> Result<(DisparityField, OpCount)> {
    let d = grid.block_size;
    if reference.width() < template.width() || reference.height() < template.height() {
        return Err(Error::arg("reference must be at least as large as the template"));
    }
    if let Some(&(x, y)) = grid.origins.iter().find(|&&(x, y)| x + d > template.width() || y + d > template.height()) {
        return Err(Error::arg(format!("block at ({x},{y}) does not fit the template")));
    }
    let ma = match options.moving_average {
        Some(c) => c,
        None => MovingAverageConfig::boxcar(d)?,
    };
    ma.validate()?;
    options.noise.validate()?;

    let sum_tables = matches!(options.method, Method::FullFast).then(|| build_sum_tables(reference));
    let diag_tables = matches!(options.method, Method::DiagFast | Method::Stream).then(|| build_diag_tables(reference));

    let results: Vec<(DisparityEntry, OpCount)> = grid
        .origins
        .par_iter()
        .map(|&origin| -> Result<(DisparityEntry, OpCount)> {
            let block = template.crop(origin.0, origin.1, d, d)?;
            let (range, o) = (options.range, options.orientation);
            let map = match options.method {
                Method::Full => ncc_full_naive(&block, reference, origin, range)?,
                Method::FullFast => ncc_full_fast(&block, reference, origin, range, sum_tables.as_ref().expect("built"))?,
                Method::Diag => ncc_diag(&block, reference, origin, range, o)?,
                Method::DiagFast => ncc_diag_fast(&block, reference, origin, range, o, diag_tables.as_ref().expect("built"))?,
                Method::Stream => ncc_stream(&block, reference, origin, range, o, ma, &options.noise, diag_tables.as_ref().expect("built"))?,
            };
            let entry = match best_shift(&map) {
                Some(b) => DisparityEntry { du: b.du as f64, dv: b.dv as f64, coeff: b.coeff, status: BlockStatus::Valid },
                None => DisparityEntry::INVALID,
            };
            Ok((entry, map.ops))
        })
        .collect::<Result<_>>()?;

    let mut ops = OpCount::default();
    let mut entries = Vec::with_capacity(results.len());
    for (e, o) in results {
        ops.merge(&o);
        entries.push(e);
    }
    Ok((DisparityField { rows: grid.rows, cols: grid.cols, entries }, ops))
}

/// Replaces invalid blocks by the mean shift of their usable 8-neighbours,
/// pass after pass until none remain. Each pass reads only the previous one.
pub fn fill_invalid(field: &DisparityField) -> Result<DisparityField> {
    if field.entries.iter().all(|e| e.status == BlockStatus::Invalid) {
        return Err(Error::Unalignable("no block produced a valid disparity".into()));
    }
    let (rows, cols) = (field.rows as isize, field.cols as isize);
    let mut current = field.clone();
    while current.entries.iter().any(|e| e.status == BlockStatus::Invalid) {
        let mut next = current.clone();
        for r in 0..rows {
            for c in 0..cols {
                let i = (r * cols + c) as usize;
                if current.entries[i].status != BlockStatus::Invalid {
                    continue;
                }
                let (mut su, mut sv, mut n) = (0.0, 0.0, 0usize);
                for dr in -1..=1 {
                    for dc in -1..=1 {
                        let (nr, nc) = (r + dr, c + dc);
                        if (dr, dc) == (0, 0) || nr < 0 || nc < 0 || nr >= rows || nc >= cols {
                            continue;
                        }
                        let e = &current.entries[(nr * cols + nc) as usize];
                        if e.status != BlockStatus::Invalid {
                            su += e.du;
                            sv += e.dv;
                            n += 1;
                        }
                    }
                }
                if n > 0 {
                    next.entries[i] = DisparityEntry {
                        du: su / n as f64,
                        dv: sv / n as f64,
                        coeff: f64::NAN,
                        status: BlockStatus::Interpolated,
                    };
                }
            }
        }
        current = next;
    }
    Ok(current)
}

/// Rectangle of the template frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Extent {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Extent {
    pub fn of(image: &GrayImage) -> Self {
        Self { x0: 0, y0: 0, width: image.width(), height: image.height() }
    }

    /// The cropped region a [`BlockGrid`] was cut from.
    pub fn cropped(image: &GrayImage, grid: &BlockGrid) -> Self {
        Self {
            x0: grid.crop_margin_x,
            y0: grid.crop_margin_y,
            width: image.width() - 2 * grid.crop_margin_x,
            height: image.height() - 2 * grid.crop_margin_y,
        }
    }
}

/// Per-pixel `(du, dv)` over an [`Extent`] of the template frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseDisparity {
    pub extent: Extent,
    pub du: Vec<f64>,
    pub dv: Vec<f64>,
}

impl DenseDisparity {
    /// Disparity at template pixel `(x, y)`, if inside the extent.
    pub fn at(&self, x: usize, y: usize) -> Option<(f64, f64)> {
        let e = &self.extent;
        if x < e.x0 || y < e.y0 || x >= e.x0 + e.width || y >= e.y0 + e.height {
            return None;
        }
        let i = (y - e.y0) * e.width + (x - e.x0);
        Some((self.du[i], self.dv[i]))
    }
}

/// Position of `p` on an axis of `n` block centers spaced `step` apart from
/// `first`, clamped to the outermost centers: `(lower index, weight)`.
fn axis_coord(p: usize, first: usize, step: usize, n: usize) -> (usize, f64) {
    if n == 1 {
        return (0, 0.0);
    }
    let t = ((p as f64 - first as f64) / step as f64).clamp(0.0, (n - 1) as f64);
    let i = (t.floor() as usize).min(n - 2);
    (i, t - i as f64)
}

/// Bilinear interpolation between block centers; constant beyond them.
pub fn interpolate_disparity(field: &DisparityField, grid: &BlockGrid, extent: Extent) -> Result<DenseDisparity> {
    if field.rows != grid.rows || field.cols != grid.cols {
        return Err(Error::arg("disparity field does not match the block grid"));
    }
    if field.entries.iter().any(|e| e.status == BlockStatus::Invalid) {
        return Err(Error::arg("disparity field still has invalid blocks; run fill_invalid first"));
    }
    let (cx0, cy0) = grid.center(0, 0);
    let step = grid.block_size;
    let n = extent.width * extent.height;
    let (mut du, mut dv) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let cols: Vec<(usize, f64)> = (0..extent.width).map(|x| axis_coord(extent.x0 + x, cx0, step, grid.cols)).collect();
    for y in 0..extent.height {
        let (r0, fy) = axis_coord(extent.y0 + y, cy0, step, grid.rows);
        let r1 = (r0 + 1).min(grid.rows - 1);
        for &(c0, fx) in &cols {
            let c1 = (c0 + 1).min(grid.cols - 1);
            let (a, b, c, d) = (field.get(r0, c0), field.get(r0, c1), field.get(r1, c0), field.get(r1, c1));
            let lerp2 = |pa: f64, pb: f64, pc: f64, pd: f64| {
                let top = pa + fx * (pb - pa);
                let bottom = pc + fx * (pd - pc);
                top + fy * (bottom - top)
            };
            du.push(lerp2(a.du, b.du, c.du, d.du));
            dv.push(lerp2(a.dv, b.dv, c.dv, d.dv));
        }
    }
    Ok(DenseDisparity { extent, du, dv })
}

/// Per-pixel validity flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn full(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![true; width * height] }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }
}

fn bilinear(image: &GrayImage, x: f64, y: f64) -> Option<f64> {
    let (w, h) = (image.width(), image.height());
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
        return None;
    }
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let top = image.get(x0, y0) + fx * (image.get(x1, y0) - image.get(x0, y0));
    let bottom = image.get(x0, y1) + fx * (image.get(x1, y1) - image.get(x0, y1));
    Some(top + fy * (bottom - top))
}

/// Inverse warp: `output(x, y) = template(x - du(x, y), y - dv(x, y))` with
/// bilinear sampling. Pixels outside the dense extent or sampling outside
/// the template are zero and unset in the mask.
pub fn warp(template: &GrayImage, dense: &DenseDisparity) -> (GrayImage, Mask) {
    let (w, h) = (template.width(), template.height());
    let mut data = Vec::with_capacity(w * h);
    let mut bits = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let v = dense
                .at(x, y)
                .and_then(|(du, dv)| bilinear(template, x as f64 - du, y as f64 - dv));
            data.push(v.unwrap_or(0.0));
            bits.push(v.is_some());
        }
    }
    let image = GrayImage::new(w, h, data).expect("finite samples of a valid image");
    (image, Mask { width: w, height: h, bits })
}

/// Pearson correlation over the pixels selected by `mask` (all if `None`).
pub fn global_correlation(a: &GrayImage, b: &GrayImage, mask: Option<&Mask>) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::arg("images must have equal extents"));
    }
    if let Some(m) = mask {
        if m.width != a.width() || m.height != a.height() {
            return Err(Error::arg("mask extent differs from the images"));
        }
    }
    let selected = |i: usize| mask.is_none_or(|m| m.bits[i]);
    let (mut n, mut sa, mut sb) = (0usize, 0.0, 0.0);
    for (i, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
        if selected(i) {
            n += 1;
            sa += x;
            sb += y;
        }
    }
    if n < 2 {
        return Err(Error::UndefinedMetric(format!("mask selects {n} pixel(s)")));
    }
    let (ma, mb) = (sa / n as f64, sb / n as f64);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (i, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
        if selected(i) {
            let (da, db) = (x - ma, y - mb);
            cov += da * db;
            va += da * da;
            vb += db * db;
        }
    }
    if va < EPS_VAR || vb < EPS_VAR {
        return Err(Error::UndefinedMetric("zero variance under the mask".into()));
    }
    Ok(cov / (va * vb).sqrt())
}

pub fn improvement_percent(before: f64, after: f64) -> Result<f64> {
    if before == 0.0 {
        return Err(Error::UndefinedMetric("improvement relative to a zero correlation".into()));
    }
    Ok(100.0 * (after - before) / before)
}

/// Multiplies every pixel by `factor`, without clamping.
pub fn scale_intensity(image: &GrayImage, factor: f64) -> Result<GrayImage> {
    if !factor.is_finite() || factor < 0.0 {
        return Err(Error::arg(format!("scale factor must be finite and >= 0, got {factor}")));
    }
    Ok(image.map(|v| v * factor))
}

/// Multiplies each pixel by a factor drawn uniformly from
/// `[1 - amplitude, 1 + amplitude]`, clamping the result at zero.
pub fn random_intensity_perturbation(image: &GrayImage, seed: u64, amplitude: f64) -> Result<GrayImage> {
    if !(0.0..=1.0).contains(&amplitude) {
        return Err(Error::arg(format!("amplitude must be in [0, 1], got {amplitude}")));
    }
    if amplitude == 0.0 {
        return Ok(image.clone());
    }
    let dist = Uniform::new_inclusive(1.0 - amplitude, 1.0 + amplitude).expect("ordered finite bounds");
    let mut rng = rng::stream(seed, Stage::Perturbation, 0);
    Ok(image.map(|v| (v * rng.sample(dist)).max(0.0)))
}

/// Ground truth of each block: the shift of the region holding its center.
pub fn block_truth(truth: &RegionTruth, grid: &BlockGrid) -> Vec<Option<(i32, i32)>> {
    (0..grid.rows)
        .flat_map(|r| (0..grid.cols).map(move |c| (r, c)))
        .map(|(r, c)| {
            let (x, y) = grid.center(r, c);
            truth.at(x, y)
        })
        .collect()
}

/// Fraction of blocks whose valid measured shift equals the ground truth.
pub fn match_rate(field: &DisparityField, truth: &[Option<(i32, i32)>]) -> f64 {
    let hits = field
        .entries
        .iter()
        .zip(truth)
        .filter(|(e, t)| {
            e.status == BlockStatus::Valid && t.is_some_and(|(du, dv)| e.du == du as f64 && e.dv == dv as f64)
        })
        .count();
    hits as f64 / field.entries.len() as f64
}

/// Output of [`align_pair`].
#[derive(Debug, Clone)]
pub struct Alignment {
    pub grid: BlockGrid,
    pub measured: DisparityField,
    pub filled: DisparityField,
    pub dense: DenseDisparity,
    pub aligned: GrayImage,
    pub mask: Mask,
    pub corr_before: f64,
    pub corr_after: f64,
    pub ops: OpCount,
}

/// Partition, estimate, fill, interpolate over the whole template, warp,
/// and score against the reference.
pub fn align_pair(template: &GrayImage, reference: &GrayImage, block_size: usize, crop_fraction: f64, options: &EstimateOptions) -> Result<Alignment> {
    let grid = partition_template(template, block_size, crop_fraction)?;
    let (measured, ops) = estimate_disparity_counted(template, reference, &grid, options)?;
    let filled = fill_invalid(&measured)?;
    let dense = interpolate_disparity(&filled, &grid, Extent::of(template))?;
    let (aligned, mask) = warp(template, &dense);
    let corr_before = global_correlation(template, reference, None)?;
    let corr_after = global_correlation(&aligned, reference, Some(&mask))?;
    Ok(Alignment { grid, measured, filled, dense, aligned, mask, corr_before, corr_after, ops })
}
