//! Full 2D block NCC, direct and sum-table accelerated.
//!
//! For a template block `t` placed at `origin + (du, dv)` on the reference `r`:
//!
//! ```text
//!            Σ (r - r̄)(t - t̄)
//! C(u,v) = ---------------------------
//!          sqrt(Σ (r - r̄)² · Σ (t - t̄)²)
//! ```
//!
//! where `r̄` is the mean of the reference window under the block and the
//! sums run over the block.

use crate::error::{Error, Result};
use crate::imageio::GrayImage;

/// Variance sums below this are treated as zero (coefficient undefined).
pub const EPS_VAR: f64 = 1e-12;

/// Top-left pixel `(x, y)` of a block in the template frame.
pub type Origin = (usize, usize);

/// Inclusive search window of shifts. `du` is horizontal, `dv` vertical.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShiftRange {
    pub du_min: i32,
    pub du_max: i32,
    pub dv_min: i32,
    pub dv_max: i32,
}

impl ShiftRange {
    pub fn new(du_min: i32, du_max: i32, dv_min: i32, dv_max: i32) -> Result<Self> {
        if du_min > du_max || dv_min > dv_max {
            return Err(Error::arg(format!(
                "empty shift range du {du_min}:{du_max}, dv {dv_min}:{dv_max}"
            )));
        }
        Ok(Self { du_min, du_max, dv_min, dv_max })
    }

    /// `-radius..=radius` on both axes.
    pub fn symmetric(radius: u32) -> Self {
        let r = radius as i32;
        Self { du_min: -r, du_max: r, dv_min: -r, dv_max: r }
    }

    pub fn du_len(&self) -> usize {
        (self.du_max - self.du_min + 1) as usize
    }

    pub fn dv_len(&self) -> usize {
        (self.dv_max - self.dv_min + 1) as usize
    }

    pub fn len(&self) -> usize {
        self.du_len() * self.dv_len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, du: i32, dv: i32) -> bool {
        (self.du_min..=self.du_max).contains(&du) && (self.dv_min..=self.dv_max).contains(&dv)
    }

    /// Row-major index, `dv` major.
    pub fn index(&self, du: i32, dv: i32) -> Option<usize> {
        self.contains(du, dv)
            .then(|| (dv - self.dv_min) as usize * self.du_len() + (du - self.du_min) as usize)
    }

    /// Shifts in index order.
    pub fn iter(&self) -> impl Iterator<Item = (i32, i32)> + '_ {
        (self.dv_min..=self.dv_max).flat_map(move |dv| (self.du_min..=self.du_max).map(move |du| (du, dv)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftStatus {
    Valid,
    /// Valid, but the raw value left `[-1, 1]` and was clamped.
    Clamped,
    ZeroVariance,
    OutOfBounds,
}

impl ShiftStatus {
    pub fn is_usable(self) -> bool {
        matches!(self, ShiftStatus::Valid | ShiftStatus::Clamped)
    }
}

/// Operation counters filled in by the correlation kernels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCount {
    pub numerator_mults: u64,
    pub numerator_adds: u64,
    /// Shifts for which a numerator was evaluated.
    pub shifts: u64,
}

impl OpCount {
    pub fn merge(&mut self, other: &OpCount) {
        self.numerator_mults += other.numerator_mults;
        self.numerator_adds += other.numerator_adds;
        self.shifts += other.shifts;
    }

    /// Numerator multiplies per evaluated shift.
    pub fn mults_per_shift(&self) -> Option<u64> {
        (self.shifts > 0).then(|| self.numerator_mults / self.shifts)
    }
}

/// Correlation coefficients over a [`ShiftRange`].
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMap {
    pub range: ShiftRange,
    pub values: Vec<f64>,
    pub status: Vec<ShiftStatus>,
    pub ops: OpCount,
}

impl CorrelationMap {
    pub fn new(range: ShiftRange) -> Self {
        let n = range.len();
        Self { range, values: vec![f64::NAN; n], status: vec![ShiftStatus::OutOfBounds; n], ops: OpCount::default() }
    }

    pub fn status(&self, du: i32, dv: i32) -> Option<ShiftStatus> {
        self.range.index(du, dv).map(|i| self.status[i])
    }

    /// Coefficient at `(du, dv)` if that shift is usable.
    pub fn get(&self, du: i32, dv: i32) -> Option<f64> {
        let i = self.range.index(du, dv)?;
        self.status[i].is_usable().then(|| self.values[i])
    }

    pub(crate) fn set(&mut self, i: usize, status: ShiftStatus, value: f64) {
        self.status[i] = status;
        self.values[i] = value;
    }
}

/// Mean and centered sum of squares of a sample set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockStats {
    pub mean: f64,
    pub variance_sum: f64,
}

impl BlockStats {
    /// Two-pass statistics.
    pub fn of(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let variance_sum = samples.iter().map(|v| (v - mean) * (v - mean)).sum();
        Self { mean, variance_sum }
    }
}

/// Prefix sums of `r` and `r²` for O(1) window statistics.
///
/// The tables accumulate deviations from the image mean rather than raw
/// intensities; this bounds cancellation when window variances are formed
/// as `Σr² - (Σr)²/N` on large images.
#[derive(Debug, Clone)]
pub struct SumTables {
    width: usize,
    height: usize,
    offset: f64,
    // (width + 1) x (height + 1), first row and column zero
    sum: Vec<f64>,
    sumsq: Vec<f64>,
}

/// Statistics of a rectangular window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowStats {
    pub count: usize,
    pub mean: f64,
    pub variance_sum: f64,
}

pub fn build_sum_tables(image: &GrayImage) -> SumTables {
    let (w, h) = (image.width(), image.height());
    let offset = image.data().iter().sum::<f64>() / (w * h) as f64;
    let stride = w + 1;
    let mut sum = vec![0.0; stride * (h + 1)];
    let mut sumsq = vec![0.0; stride * (h + 1)];
    for y in 0..h {
        let mut row_sum = 0.0;
        let mut row_sq = 0.0;
        for (x, &v) in image.row(y).iter().enumerate() {
            let d = v - offset;
            row_sum += d;
            row_sq += d * d;
            let i = (y + 1) * stride + x + 1;
            sum[i] = sum[i - stride] + row_sum;
            sumsq[i] = sumsq[i - stride] + row_sq;
        }
    }
    SumTables { width: w, height: h, offset, sum, sumsq }
}

impl SumTables {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Σ r over `[0..=x] x [0..=y]`.
    pub fn running_sum(&self, x: usize, y: usize) -> f64 {
        let n = ((x + 1) * (y + 1)) as f64;
        self.sum[(y + 1) * (self.width + 1) + x + 1] + n * self.offset
    }

    /// Σ r² over `[0..=x] x [0..=y]`.
    pub fn running_sumsq(&self, x: usize, y: usize) -> f64 {
        let n = ((x + 1) * (y + 1)) as f64;
        let i = (y + 1) * (self.width + 1) + x + 1;
        self.sumsq[i] + 2.0 * self.offset * self.sum[i] + n * self.offset * self.offset
    }

    fn rect(table: &[f64], stride: usize, x: usize, y: usize, w: usize, h: usize) -> f64 {
        table[(y + h) * stride + x + w] - table[y * stride + x + w] - table[(y + h) * stride + x] + table[y * stride + x]
    }

    /// Σ r over the `w x h` window at `(x, y)`.
    pub fn window_sum(&self, x: usize, y: usize, w: usize, h: usize) -> f64 {
        Self::rect(&self.sum, self.width + 1, x, y, w, h) + (w * h) as f64 * self.offset
    }

    pub fn window_stats(&self, x: usize, y: usize, w: usize, h: usize) -> WindowStats {
        let stride = self.width + 1;
        let n = (w * h) as f64;
        let s = Self::rect(&self.sum, stride, x, y, w, h);
        let q = Self::rect(&self.sumsq, stride, x, y, w, h);
        WindowStats { count: w * h, mean: s / n + self.offset, variance_sum: (q - s * s / n).max(0.0) }
    }
}

/// Dot product with four partial accumulators; adds `len` to both counters.
#[inline]
pub(crate) fn dot_counted(a: &[f64], b: &[f64], ops: &mut OpCount) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    ops.numerator_mults += a.len() as u64;
    ops.numerator_adds += a.len() as u64;
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Top-left of the reference window for `origin + (du, dv)`, if the whole
/// `w x h` window fits inside a `ref_w x ref_h` image.
pub(crate) fn window_at(origin: Origin, du: i32, dv: i32, w: usize, h: usize, ref_w: usize, ref_h: usize) -> Option<(usize, usize)> {
    let x = origin.0 as i64 + du as i64;
    let y = origin.1 as i64 + dv as i64;
    (x >= 0 && y >= 0 && x as usize + w <= ref_w && y as usize + h <= ref_h).then_some((x as usize, y as usize))
}

pub(crate) fn check_fits(block: &GrayImage, reference: &GrayImage) -> Result<()> {
    if block.width() > reference.width() || block.height() > reference.height() {
        return Err(Error::arg(format!(
            "template block {}x{} larger than reference {}x{}",
            block.width(),
            block.height(),
            reference.width(),
            reference.height()
        )));
    }
    Ok(())
}

pub(crate) fn coefficient(numerator: f64, var_t: f64, var_r: f64) -> (ShiftStatus, f64) {
    if var_t < EPS_VAR || var_r < EPS_VAR {
        (ShiftStatus::ZeroVariance, f64::NAN)
    } else {
        (ShiftStatus::Valid, numerator / (var_t * var_r).sqrt())
    }
}

/// Direct evaluation: two-pass means and explicit sums at every shift.
pub fn ncc_full_naive(block: &GrayImage, reference: &GrayImage, origin: Origin, range: ShiftRange) -> Result<CorrelationMap> {
    check_fits(block, reference)?;
    let (tw, th) = (block.width(), block.height());
    let t = BlockStats::of(block.data());
    let mut map = CorrelationMap::new(range);
    let mut window = Vec::with_capacity(tw * th);
    for (i, (du, dv)) in range.iter().enumerate() {
        let Some((wx, wy)) = window_at(origin, du, dv, tw, th, reference.width(), reference.height()) else {
            continue;
        };
        window.clear();
        for y in wy..wy + th {
            window.extend_from_slice(&reference.row(y)[wx..wx + tw]);
        }
        let r = BlockStats::of(&window);
        let mut num = 0.0;
        for (rv, tv) in window.iter().zip(block.data()) {
            num += (rv - r.mean) * (tv - t.mean);
        }
        map.ops.numerator_mults += (tw * th) as u64;
        map.ops.numerator_adds += (tw * th) as u64;
        map.ops.shifts += 1;
        let (status, value) = coefficient(num, t.variance_sum, r.variance_sum);
        map.set(i, status, value);
    }
    Ok(map)
}

/// Sum-table evaluation. The reference mean and variance come from `tables`;
/// the numerator is `Σ r·(t - t̄)`, which equals `Σ (r - r̄)(t - t̄)` because
/// the centered template sums to zero.
pub fn ncc_full_fast(
    block: &GrayImage,
    reference: &GrayImage,
    origin: Origin,
    range: ShiftRange,
    tables: &SumTables,
) -> Result<CorrelationMap> {
    check_fits(block, reference)?;
    if tables.width() != reference.width() || tables.height() != reference.height() {
        return Err(Error::arg("sum tables were not built from this reference"));
    }
    let (tw, th) = (block.width(), block.height());
    let t = BlockStats::of(block.data());
    let centered: Vec<f64> = block.data().iter().map(|v| v - t.mean).collect();
    let mut map = CorrelationMap::new(range);
    for (i, (du, dv)) in range.iter().enumerate() {
        let Some((wx, wy)) = window_at(origin, du, dv, tw, th, reference.width(), reference.height()) else {
            continue;
        };
        let mut num = 0.0;
        for row in 0..th {
            let r = &reference.row(wy + row)[wx..wx + tw];
            num += dot_counted(r, &centered[row * tw..(row + 1) * tw], &mut map.ops);
        }
        map.ops.shifts += 1;
        let stats = tables.window_stats(wx, wy, tw, th);
        let (status, value) = coefficient(num, t.variance_sum, stats.variance_sum);
        map.set(i, status, value);
    }
    Ok(map)
}

/// Winning shift of a correlation map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestShift {
    pub du: i32,
    pub dv: i32,
    pub coeff: f64,
}

/// Usable shift with the largest coefficient. Exact ties go to the smaller
/// `du² + dv²`, then the smaller `dv`, then the smaller `du`.
pub fn best_shift(map: &CorrelationMap) -> Option<BestShift> {
    let key = |du: i32, dv: i32| (du * du + dv * dv, dv, du);
    let mut best: Option<BestShift> = None;
    for (i, (du, dv)) in map.range.iter().enumerate() {
        if !map.status[i].is_usable() {
            continue;
        }
        let c = map.values[i];
        let better = match best {
            None => true,
            Some(b) => c > b.coeff || (c == b.coeff && key(du, dv) < key(b.du, b.dv)),
        };
        if better {
            best = Some(BestShift { du, dv, coeff: c });
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |_, _| rng.random::<f64>()).unwrap()
    }

    #[test]
    fn constant_tables() {
        let t = build_sum_tables(&GrayImage::filled(3, 3, 0.5).unwrap());
        assert!((t.running_sum(2, 2) - 4.5).abs() < 1e-12);
        for (x, y) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            assert!((t.window_sum(x, y, 2, 2) - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_pixel_tables() {
        let t = build_sum_tables(&GrayImage::filled(1, 1, 0.37).unwrap());
        assert!((t.running_sum(0, 0) - 0.37).abs() < 1e-15);
        assert!((t.running_sumsq(0, 0) - 0.37 * 0.37).abs() < 1e-15);
    }

    #[test]
    fn window_variance_matches_two_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_image(&mut rng, 16, 16);
        let tables = build_sum_tables(&img);
        for h in 1..=16 {
            for w in 1..=16 {
                for y in 0..=16 - h {
                    for x in 0..=16 - w {
                        let window = img.crop(x, y, w, h).unwrap();
                        let direct = BlockStats::of(window.data());
                        let s = tables.window_stats(x, y, w, h);
                        assert!((s.variance_sum - direct.variance_sum).abs() < 1e-12);
                        assert!((s.mean - direct.mean).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn running_sum_is_monotone_on_nonnegative_input() {
        let img = GrayImage::from_fn(9, 7, |x, y| ((x * 7 + y * 3) % 5) as f64).unwrap();
        let t = build_sum_tables(&img);
        for y in 0..7 {
            for x in 0..9 {
                if x > 0 {
                    assert!(t.running_sum(x, y) >= t.running_sum(x - 1, y));
                }
                if y > 0 {
                    assert!(t.running_sum(x, y) >= t.running_sum(x, y - 1));
                }
            }
        }
    }

    #[test]
    fn perfect_match_and_anticorrelation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let reference = random_image(&mut rng, 24, 24);
        let block = reference.crop(4, 6, 8, 8).unwrap();
        let range = ShiftRange::symmetric(2);
        let tables = build_sum_tables(&reference);
        for map in [
            ncc_full_naive(&block, &reference, (4, 6), range).unwrap(),
            ncc_full_fast(&block, &reference, (4, 6), range, &tables).unwrap(),
        ] {
            assert!((map.get(0, 0).unwrap() - 1.0).abs() < 1e-9);
        }
        let mean = BlockStats::of(block.data()).mean;
        let negated = block.map(|v| mean - v);
        let map = ncc_full_naive(&negated, &reference, (4, 6), range).unwrap();
        assert!((map.get(0, 0).unwrap() + 1.0).abs() < 1e-9);
    }

    #[test]
    fn flat_template_is_zero_variance_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let reference = random_image(&mut rng, 20, 20);
        let block = GrayImage::filled(6, 6, 0.3).unwrap();
        let map = ncc_full_naive(&block, &reference, (7, 7), ShiftRange::symmetric(3)).unwrap();
        assert!(map.status.iter().all(|&s| s == ShiftStatus::ZeroVariance));
        let fast = ncc_full_fast(&block, &reference, (7, 7), ShiftRange::symmetric(3), &build_sum_tables(&reference)).unwrap();
        assert!(fast.status.iter().all(|&s| s == ShiftStatus::ZeroVariance));
    }

    #[test]
    fn flat_reference_on_large_image_is_zero_variance() {
        let reference = GrayImage::filled(512, 512, 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let block = random_image(&mut rng, 32, 32);
        let tables = build_sum_tables(&reference);
        let map = ncc_full_fast(&block, &reference, (400, 400), ShiftRange::symmetric(4), &tables).unwrap();
        assert!(map.status.iter().all(|&s| s == ShiftStatus::ZeroVariance));
    }

    #[test]
    fn out_of_bounds_shifts_are_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let reference = random_image(&mut rng, 16, 16);
        let block = reference.crop(0, 0, 8, 8).unwrap();
        let map = ncc_full_naive(&block, &reference, (0, 0), ShiftRange::new(-2, 2, -1, 1).unwrap()).unwrap();
        assert_eq!(map.status(-1, 0), Some(ShiftStatus::OutOfBounds));
        assert_eq!(map.status(0, -1), Some(ShiftStatus::OutOfBounds));
        assert_eq!(map.status(2, 1), Some(ShiftStatus::Valid));
    }

    #[test]
    fn errors() {
        let small = GrayImage::filled(4, 4, 0.1).unwrap();
        let big = GrayImage::filled(8, 8, 0.1).unwrap();
        assert!(ncc_full_naive(&big, &small, (0, 0), ShiftRange::symmetric(1)).is_err());
        let other = GrayImage::filled(9, 9, 0.1).unwrap();
        assert!(ncc_full_fast(&small, &big, (0, 0), ShiftRange::symmetric(1), &build_sum_tables(&other)).is_err());
        assert!(ShiftRange::new(2, 1, 0, 0).is_err());
    }

    #[test]
    fn shifted_copy_peaks_at_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let reference = random_image(&mut rng, 32, 32);
        let block = reference.crop(10 + 2, 10 + 1, 8, 8).unwrap();
        let map = ncc_full_fast(&block, &reference, (10, 10), ShiftRange::symmetric(3), &build_sum_tables(&reference)).unwrap();
        let best = best_shift(&map).unwrap();
        assert_eq!((best.du, best.dv), (2, 1));
    }

    fn map_with(range: ShiftRange, entries: &[((i32, i32), f64)]) -> CorrelationMap {
        let mut map = CorrelationMap::new(range);
        for i in 0..range.len() {
            map.set(i, ShiftStatus::Valid, 0.0);
        }
        for &((du, dv), v) in entries {
            let i = range.index(du, dv).unwrap();
            map.set(i, ShiftStatus::Valid, v);
        }
        map
    }

    #[test]
    fn best_shift_unique_and_ties() {
        let range = ShiftRange::symmetric(3);
        let best = best_shift(&map_with(range, &[((3, -2), 0.98)])).unwrap();
        assert_eq!((best.du, best.dv, best.coeff), (3, -2, 0.98));

        let best = best_shift(&map_with(range, &[((0, 1), 0.7), ((1, 0), 0.7)])).unwrap();
        assert_eq!((best.du, best.dv), (1, 0));
        let best = best_shift(&map_with(range, &[((-1, 0), 0.7), ((1, 0), 0.7)])).unwrap();
        assert_eq!((best.du, best.dv), (-1, 0));
        let best = best_shift(&map_with(range, &[((2, 2), 0.7), ((0, -1), 0.7)])).unwrap();
        assert_eq!((best.du, best.dv), (0, -1));

        let mut flagged = CorrelationMap::new(range);
        for i in 0..range.len() {
            flagged.set(i, ShiftStatus::ZeroVariance, f64::NAN);
        }
        assert!(best_shift(&flagged).is_none());
    }

    #[test]
    fn op_counts_are_block_area_per_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let reference = random_image(&mut rng, 40, 40);
        let block = reference.crop(12, 12, 16, 16).unwrap();
        let map = ncc_full_fast(&block, &reference, (12, 12), ShiftRange::symmetric(2), &build_sum_tables(&reference)).unwrap();
        assert_eq!(map.ops.shifts, 25);
        assert_eq!(map.ops.mults_per_shift(), Some(256));
    }
}
