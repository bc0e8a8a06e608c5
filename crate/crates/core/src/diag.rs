//! NCC restricted to one diagonal of square blocks.
//!
//! Only the `D` samples on the main (or anti) diagonal of the template
//! block and of each reference window enter the coefficient, so the
//! numerator costs `D` multiply-adds per shift instead of `D * D`. Means
//! and variance sums are taken over the same `D` samples.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::imageio::GrayImage;
use crate::ncc::{check_fits, coefficient, dot_counted, window_at, BlockStats, CorrelationMap, Origin, ShiftRange};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Orientation {
    /// `(k, k)`, top-left to bottom-right.
    #[default]
    Main,
    /// Row `D-1-k`, column `k`: bottom-left to top-right.
    Anti,
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Orientation::Main => "main",
            Orientation::Anti => "anti",
        })
    }
}

impl FromStr for Orientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "main" => Ok(Orientation::Main),
            "anti" => Ok(Orientation::Anti),
            other => Err(Error::arg(format!("unknown orientation {other:?}, expected main|anti"))),
        }
    }
}

impl Orientation {
    /// Pixel `(x, y)` of the `k`-th diagonal sample of a `d x d` window at `(wx, wy)`.
    #[inline]
    pub fn sample_at(self, wx: usize, wy: usize, d: usize, k: usize) -> (usize, usize) {
        match self {
            Orientation::Main => (wx + k, wy + k),
            Orientation::Anti => (wx + k, wy + d - 1 - k),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagVector {
    pub samples: Vec<f64>,
    pub orientation: Orientation,
}

pub(crate) fn require_square(block: &GrayImage) -> Result<usize> {
    if block.width() != block.height() {
        return Err(Error::arg(format!(
            "diagonal NCC needs a square block, got {}x{}",
            block.width(),
            block.height()
        )));
    }
    if block.width() < 2 {
        return Err(Error::arg("diagonal NCC needs blocks of side >= 2"));
    }
    Ok(block.width())
}

pub fn extract_diagonal(block: &GrayImage, orientation: Orientation) -> Result<DiagVector> {
    let d = require_square(block)?;
    let samples = diagonal_samples(block, 0, 0, d, orientation);
    Ok(DiagVector { samples, orientation })
}

pub(crate) fn diagonal_samples(image: &GrayImage, wx: usize, wy: usize, d: usize, orientation: Orientation) -> Vec<f64> {
    (0..d)
        .map(|k| {
            let (x, y) = orientation.sample_at(wx, wy, d, k);
            image.get(x, y)
        })
        .collect()
}

/// Diagonal NCC with two-pass statistics at every shift.
pub fn ncc_diag(
    block: &GrayImage,
    reference: &GrayImage,
    origin: Origin,
    range: ShiftRange,
    orientation: Orientation,
) -> Result<CorrelationMap> {
    let d = require_square(block)?;
    check_fits(block, reference)?;
    let t = extract_diagonal(block, orientation)?.samples;
    let ts = BlockStats::of(&t);
    let mut map = CorrelationMap::new(range);
    for (i, (du, dv)) in range.iter().enumerate() {
        let Some((wx, wy)) = window_at(origin, du, dv, d, d, reference.width(), reference.height()) else {
            continue;
        };
        let r = diagonal_samples(reference, wx, wy, d, orientation);
        let rs = BlockStats::of(&r);
        let num: f64 = r.iter().zip(&t).map(|(rv, tv)| (rv - rs.mean) * (tv - ts.mean)).sum();
        map.ops.numerator_mults += d as u64;
        map.ops.numerator_adds += d as u64;
        map.ops.shifts += 1;
        let (status, value) = coefficient(num, ts.variance_sum, rs.variance_sum);
        map.set(i, status, value);
    }
    Ok(map)
}

/// Prefix sums along both diagonal directions.
///
/// `main_sum(x, y) = r(x, y) + main_sum(x-1, y-1)` and
/// `anti_sum(x, y) = r(x, y) + anti_sum(x+1, y-1)`, with out-of-image terms
/// zero. As with [`crate::ncc::SumTables`], deviations from the image mean
/// are accumulated.
#[derive(Debug, Clone)]
pub struct DiagTables {
    width: usize,
    height: usize,
    offset: f64,
    main_sum: Vec<f64>,
    main_sumsq: Vec<f64>,
    anti_sum: Vec<f64>,
    anti_sumsq: Vec<f64>,
}

/// Sum and centered sum of squares of a diagonal segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentStats {
    pub len: usize,
    pub sum: f64,
    pub mean: f64,
    pub variance_sum: f64,
}

pub fn build_diag_tables(reference: &GrayImage) -> DiagTables {
    let (w, h) = (reference.width(), reference.height());
    let offset = reference.data().iter().sum::<f64>() / (w * h) as f64;
    let mut main_sum = vec![0.0; w * h];
    let mut main_sumsq = vec![0.0; w * h];
    let mut anti_sum = vec![0.0; w * h];
    let mut anti_sumsq = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let d = reference.get(x, y) - offset;
            let i = y * w + x;
            let (mut ms, mut mq, mut as_, mut aq) = (d, d * d, d, d * d);
            if x > 0 && y > 0 {
                ms += main_sum[i - w - 1];
                mq += main_sumsq[i - w - 1];
            }
            if x + 1 < w && y > 0 {
                as_ += anti_sum[i - w + 1];
                aq += anti_sumsq[i - w + 1];
            }
            main_sum[i] = ms;
            main_sumsq[i] = mq;
            anti_sum[i] = as_;
            anti_sumsq[i] = aq;
        }
    }
    DiagTables { width: w, height: h, offset, main_sum, main_sumsq, anti_sum, anti_sumsq }
}

impl DiagTables {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Statistics of `len` samples starting at `(x, y)`, stepping `(+1, +1)`
    /// for [`Orientation::Main`] and `(+1, -1)` for [`Orientation::Anti`].
    pub fn segment(&self, orientation: Orientation, x: usize, y: usize, len: usize) -> Result<SegmentStats> {
        let inside = match orientation {
            Orientation::Main => x + len <= self.width && y + len <= self.height,
            Orientation::Anti => x + len <= self.width && y < self.height && y + 1 >= len,
        };
        if len == 0 || !inside {
            return Err(Error::arg(format!(
                "{orientation} diagonal segment of length {len} at ({x},{y}) leaves the {}x{} image",
                self.width, self.height
            )));
        }
        Ok(self.segment_unchecked(orientation, x, y, len))
    }

    #[inline]
    fn segment_unchecked(&self, orientation: Orientation, x: usize, y: usize, len: usize) -> SegmentStats {
        let w = self.width;
        let (s, q) = match orientation {
            Orientation::Main => {
                let end = (y + len - 1) * w + x + len - 1;
                let (mut s, mut q) = (self.main_sum[end], self.main_sumsq[end]);
                if x > 0 && y > 0 {
                    let before = (y - 1) * w + x - 1;
                    s -= self.main_sum[before];
                    q -= self.main_sumsq[before];
                }
                (s, q)
            }
            Orientation::Anti => {
                // anti_sum accumulates towards (x+1, y-1), so the segment
                // starting at (x, y) reads forward from there.
                let start = y * w + x;
                let (mut s, mut q) = (self.anti_sum[start], self.anti_sumsq[start]);
                if x + len < w && y >= len {
                    let after = (y - len) * w + x + len;
                    s -= self.anti_sum[after];
                    q -= self.anti_sumsq[after];
                }
                (s, q)
            }
        };
        let n = len as f64;
        SegmentStats {
            len,
            sum: s + n * self.offset,
            mean: s / n + self.offset,
            variance_sum: (q - s * s / n).max(0.0),
        }
    }

    /// Statistics of the diagonal of the `d x d` window at `(wx, wy)`.
    #[inline]
    pub(crate) fn window_diagonal(&self, orientation: Orientation, wx: usize, wy: usize, d: usize) -> SegmentStats {
        match orientation {
            Orientation::Main => self.segment_unchecked(orientation, wx, wy, d),
            Orientation::Anti => self.segment_unchecked(orientation, wx, wy + d - 1, d),
        }
    }
}

/// Diagonal NCC with the reference statistics taken from `tables`.
pub fn ncc_diag_fast(
    block: &GrayImage,
    reference: &GrayImage,
    origin: Origin,
    range: ShiftRange,
    orientation: Orientation,
    tables: &DiagTables,
) -> Result<CorrelationMap> {
    let d = require_square(block)?;
    check_fits(block, reference)?;
    if tables.width() != reference.width() || tables.height() != reference.height() {
        return Err(Error::arg("diagonal tables were not built from this reference"));
    }
    let t = extract_diagonal(block, orientation)?.samples;
    let ts = BlockStats::of(&t);
    let centered: Vec<f64> = t.iter().map(|v| v - ts.mean).collect();
    let mut map = CorrelationMap::new(range);
    let mut r = vec![0.0; d];
    let (rw, data) = (reference.width(), reference.data());
    for (i, (du, dv)) in range.iter().enumerate() {
        let Some((wx, wy)) = window_at(origin, du, dv, d, d, rw, reference.height()) else {
            continue;
        };
        for (k, slot) in r.iter_mut().enumerate() {
            let (x, y) = orientation.sample_at(wx, wy, d, k);
            *slot = data[y * rw + x];
        }
        let num = dot_counted(&r, &centered, &mut map.ops);
        map.ops.shifts += 1;
        let rs = tables.window_diagonal(orientation, wx, wy, d);
        let (status, value) = coefficient(num, ts.variance_sum, rs.variance_sum);
        map.set(i, status, value);
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ncc::{best_shift, ncc_full_naive, ShiftStatus};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn nine() -> GrayImage {
        GrayImage::new(3, 3, (1..=9).map(|v| v as f64 / 9.0).collect()).unwrap()
    }

    #[test]
    fn extracts_both_diagonals() {
        let main = extract_diagonal(&nine(), Orientation::Main).unwrap();
        assert_eq!(main.samples, vec![1.0 / 9.0, 5.0 / 9.0, 1.0]);
        let anti = extract_diagonal(&nine(), Orientation::Anti).unwrap();
        assert_eq!(anti.samples, vec![7.0 / 9.0, 5.0 / 9.0, 3.0 / 9.0]);
    }

    #[test]
    fn non_square_is_rejected() {
        let block = GrayImage::filled(4, 3, 0.2).unwrap();
        assert!(extract_diagonal(&block, Orientation::Main).is_err());
        let reference = GrayImage::filled(20, 20, 0.2).unwrap();
        assert!(ncc_diag(&block, &reference, (5, 5), ShiftRange::symmetric(1), Orientation::Main).is_err());
    }

    #[test]
    fn constant_segments() {
        let t = build_diag_tables(&GrayImage::filled(8, 8, 0.5).unwrap());
        for o in [Orientation::Main, Orientation::Anti] {
            let s = t.window_diagonal(o, 2, 3, 4);
            assert!((s.sum - 2.0).abs() < 1e-12);
            assert!(s.variance_sum < 1e-20);
        }
    }

    #[test]
    fn degenerate_row_image() {
        let img = GrayImage::new(5, 1, vec![0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let t = build_diag_tables(&img);
        for x in 0..5 {
            for o in [Orientation::Main, Orientation::Anti] {
                let s = t.segment(o, x, 0, 1).unwrap();
                assert!((s.sum - img.get(x, 0)).abs() < 1e-15);
            }
        }
        assert!(t.segment(Orientation::Main, 0, 0, 2).is_err());
        assert!(t.segment(Orientation::Anti, 0, 0, 2).is_err());
    }

    #[test]
    fn segment_variance_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let img = GrayImage::from_fn(32, 32, |_, _| rng.random::<f64>()).unwrap();
        let t = build_diag_tables(&img);
        for len in 1..=32 {
            for y in 0..32 {
                for x in 0..=32 - len {
                    if y + len <= 32 {
                        let direct: Vec<f64> = (0..len).map(|k| img.get(x + k, y + k)).collect();
                        let s = t.segment(Orientation::Main, x, y, len).unwrap();
                        assert!((s.variance_sum - BlockStats::of(&direct).variance_sum).abs() < 1e-12);
                    }
                    if y + 1 >= len {
                        let direct: Vec<f64> = (0..len).map(|k| img.get(x + k, y - k)).collect();
                        let s = t.segment(Orientation::Anti, x, y, len).unwrap();
                        assert!((s.variance_sum - BlockStats::of(&direct).variance_sum).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn perfect_match_both_routes() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let reference = GrayImage::from_fn(30, 30, |_, _| rng.random::<f64>()).unwrap();
        let block = reference.crop(9, 11, 10, 10).unwrap();
        let tables = build_diag_tables(&reference);
        for o in [Orientation::Main, Orientation::Anti] {
            let slow = ncc_diag(&block, &reference, (9, 11), ShiftRange::symmetric(3), o).unwrap();
            let fast = ncc_diag_fast(&block, &reference, (9, 11), ShiftRange::symmetric(3), o, &tables).unwrap();
            assert!((slow.get(0, 0).unwrap() - 1.0).abs() < 1e-9);
            assert!((fast.get(0, 0).unwrap() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn flat_diagonal_fails_where_full_ncc_succeeds() {
        // Textured everywhere except the main diagonal, which is constant.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let reference = GrayImage::from_fn(24, 24, |x, y| if x == y { 0.5 } else { rng.random::<f64>() }).unwrap();
        let block = reference.crop(8, 8, 8, 8).unwrap();
        let tables = build_diag_tables(&reference);
        let diag = ncc_diag_fast(&block, &reference, (8, 8), ShiftRange::symmetric(2), Orientation::Main, &tables).unwrap();
        assert_eq!(diag.status(0, 0), Some(ShiftStatus::ZeroVariance));
        assert!(diag.status.iter().all(|&s| s == ShiftStatus::ZeroVariance));
        let full = ncc_full_naive(&block, &reference, (8, 8), ShiftRange::symmetric(2)).unwrap();
        assert_eq!(best_shift(&full).map(|b| (b.du, b.dv)), Some((0, 0)));
        // the anti-diagonal fallback still works
        let anti = ncc_diag_fast(&block, &reference, (8, 8), ShiftRange::symmetric(2), Orientation::Anti, &tables).unwrap();
        assert_eq!(best_shift(&anti).map(|b| (b.du, b.dv)), Some((0, 0)));
    }

    #[test]
    fn numerator_cost_is_block_side() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let reference = GrayImage::from_fn(48, 48, |_, _| rng.random::<f64>()).unwrap();
        let block = reference.crop(16, 16, 16, 16).unwrap();
        let map = ncc_diag_fast(&block, &reference, (16, 16), ShiftRange::symmetric(4), Orientation::Main, &build_diag_tables(&reference)).unwrap();
        assert_eq!(map.ops.mults_per_shift(), Some(16));
        assert_eq!(map.ops.shifts, 81);
    }
}
