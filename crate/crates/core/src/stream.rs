//! Streaming NCC model of an analog correlator.
//!
//! Diagonal samples are zero-meaned by subtracting a causal moving average
//! (a low-pass filter in hardware), then multiplied and integrated. Noise
//! from the multiplier and the integrator is injected as Gaussian values
//! scaled by the RMS of the clean product stream. The denominator stays
//! digital and exact, computed from [`DiagTables`].
//!
//! Also holds the dynamic-range and power-budget helpers for the analog
//! channel array.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::diag::{diagonal_samples, extract_diagonal, require_square, DiagTables, Orientation};
use crate::error::{Error, Result};
use crate::imageio::GrayImage;
use crate::ncc::{check_fits, window_at, BlockStats, CorrelationMap, Origin, ShiftRange, ShiftStatus, EPS_VAR};
use crate::rng::{self, shift_stream_id, Stage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MovingAverageConfig {
    /// Mean of the last `window_len` samples; the window grows from one
    /// sample during warmup.
    Boxcar { window_len: usize },
    /// `y[n] = alpha*x[n] + (1 - alpha)*y[n-1]`, with `y[-1] = x[0]`.
    SinglePole { alpha: f64 },
}

impl MovingAverageConfig {
    pub fn boxcar(window_len: usize) -> Result<Self> {
        let c = MovingAverageConfig::Boxcar { window_len };
        c.validate()?;
        Ok(c)
    }

    pub fn single_pole(alpha: f64) -> Result<Self> {
        let c = MovingAverageConfig::SinglePole { alpha };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            MovingAverageConfig::Boxcar { window_len: 0 } => {
                Err(Error::arg("boxcar window length must be >= 1"))
            }
            MovingAverageConfig::SinglePole { alpha } if !(alpha > 0.0 && alpha <= 1.0) => {
                Err(Error::arg(format!("single-pole alpha must be in (0, 1], got {alpha}")))
            }
            _ => Ok(()),
        }
    }
}

pub fn moving_average(signal: &[f64], config: MovingAverageConfig) -> Result<Vec<f64>> {
    if signal.is_empty() {
        return Err(Error::arg("moving average of an empty signal"));
    }
    config.validate()?;
    let mut out = Vec::with_capacity(signal.len());
    match config {
        MovingAverageConfig::Boxcar { window_len } => {
            let mut acc = 0.0;
            for (n, &x) in signal.iter().enumerate() {
                acc += x;
                if n >= window_len {
                    acc -= signal[n - window_len];
                }
                out.push(acc / (n + 1).min(window_len) as f64);
            }
        }
        MovingAverageConfig::SinglePole { alpha } => {
            let mut y = signal[0];
            for &x in signal {
                y = alpha * x + (1.0 - alpha) * y;
                out.push(y);
            }
        }
    }
    Ok(out)
}

/// `signal[n] - moving_average(signal)[n]`.
pub fn zero_mean_stream(signal: &[f64], config: MovingAverageConfig) -> Result<Vec<f64>> {
    let avg = moving_average(signal, config)?;
    Ok(signal.iter().zip(avg).map(|(x, m)| x - m).collect())
}

pub fn rms(signal: &[f64]) -> Result<f64> {
    if signal.is_empty() {
        return Err(Error::arg("rms of an empty signal"));
    }
    Ok((signal.iter().map(|v| v * v).sum::<f64>() / signal.len() as f64).sqrt())
}

/// How often the multiplier draws a fresh Gaussian value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseCadence {
    /// Independent value for every product sample.
    #[default]
    PerSample,
    /// One value for the whole image, shared by every sample of every stream.
    PerImage,
}

/// Noise levels of the analog stages, as fractions of the product RMS.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub multiplier_fraction: f64,
    pub integrator_fraction: f64,
    pub seed: u64,
    pub cadence: NoiseCadence,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self { multiplier_fraction: 0.0, integrator_fraction: 0.0, seed: 0, cadence: NoiseCadence::PerSample }
    }

    pub fn new(multiplier_fraction: f64, integrator_fraction: f64, seed: u64) -> Result<Self> {
        let m = Self { multiplier_fraction, integrator_fraction, seed, cadence: NoiseCadence::PerSample };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, f) in [("multiplier", self.multiplier_fraction), ("integrator", self.integrator_fraction)] {
            if !(f.is_finite() && f >= 0.0) {
                return Err(Error::arg(format!("{name} noise fraction must be finite and >= 0, got {f}")));
            }
        }
        Ok(())
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::noiseless()
    }
}

/// Correlates `a` and `b` through a noisy multiplier and integrator.
///
/// Each product gets `g_n * multiplier_fraction * rms_a * rms_b`; the
/// integrated sum gets `g * integrator_fraction * rms_a * rms_b * sqrt(N)`
/// once at readout. Gaussian values come from the stream `stream_id` of
/// `noise.seed`, so the result is independent of evaluation order.
pub fn multiply_integrate(a: &[f64], b: &[f64], noise: &NoiseModel, rms_a: f64, rms_b: f64, stream_id: u64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::arg(format!("stream lengths differ: {} vs {}", a.len(), b.len())));
    }
    if !(rms_a >= 0.0 && rms_b >= 0.0) {
        return Err(Error::arg("rms values must be >= 0"));
    }
    noise.validate()?;
    Ok(multiply_integrate_unchecked(a, b, noise, rms_a * rms_b, stream_id))
}

fn multiply_integrate_unchecked(a: &[f64], b: &[f64], noise: &NoiseModel, rms_p: f64, stream_id: u64) -> f64 {
    let mut acc = 0.0;
    if noise.multiplier_fraction > 0.0 {
        let scale = noise.multiplier_fraction * rms_p;
        match noise.cadence {
            NoiseCadence::PerSample => {
                let mut g = rng::stream(noise.seed, Stage::Multiplier, stream_id);
                for (x, y) in a.iter().zip(b) {
                    let n: f64 = g.sample(StandardNormal);
                    acc += x * y + n * scale;
                }
            }
            NoiseCadence::PerImage => {
                let n: f64 = rng::stream(noise.seed, Stage::Multiplier, 0).sample(StandardNormal);
                for (x, y) in a.iter().zip(b) {
                    acc += x * y + n * scale;
                }
            }
        }
    } else {
        for (x, y) in a.iter().zip(b) {
            acc += x * y;
        }
    }
    if noise.integrator_fraction > 0.0 {
        let n: f64 = rng::stream(noise.seed, Stage::Integrator, stream_id).sample(StandardNormal);
        acc += n * noise.integrator_fraction * rms_p * (a.len() as f64).sqrt();
    }
    acc
}

/// Streaming diagonal NCC.
///
/// Numerator: [`multiply_integrate`] of the zero-mean streams of the
/// template diagonal and the reference-window diagonal. Denominator: exact
/// diagonal variance sums. Shifts whose exact variance or streamed energy is
/// below [`EPS_VAR`] are flagged zero-variance; coefficients outside
/// `[-1, 1]` are clamped and flagged [`ShiftStatus::Clamped`].
#[allow(clippy::too_many_arguments)]
pub fn ncc_stream(
    block: &GrayImage,
    reference: &GrayImage,
    origin: Origin,
    range: ShiftRange,
    orientation: Orientation,
    ma: MovingAverageConfig,
    noise: &NoiseModel,
    tables: &DiagTables,
) -> Result<CorrelationMap> {
    let d = require_square(block)?;
    check_fits(block, reference)?;
    ma.validate()?;
    noise.validate()?;
    if tables.width() != reference.width() || tables.height() != reference.height() {
        return Err(Error::arg("diagonal tables were not built from this reference"));
    }
    let t = extract_diagonal(block, orientation)?.samples;
    let t_var = BlockStats::of(&t).variance_sum;
    let zt = zero_mean_stream(&t, ma)?;
    let rms_t = rms(&zt)?;
    let energy_t = rms_t * rms_t * d as f64;

    let mut map = CorrelationMap::new(range);
    for (i, (du, dv)) in range.iter().enumerate() {
        let Some((wx, wy)) = window_at(origin, du, dv, d, d, reference.width(), reference.height()) else {
            continue;
        };
        let r = diagonal_samples(reference, wx, wy, d, orientation);
        let zr = zero_mean_stream(&r, ma)?;
        let rms_r = rms(&zr)?;
        let r_var = tables.window_diagonal(orientation, wx, wy, d).variance_sum;
        if t_var < EPS_VAR || r_var < EPS_VAR || energy_t < EPS_VAR || rms_r * rms_r * (d as f64) < EPS_VAR {
            map.set(i, ShiftStatus::ZeroVariance, f64::NAN);
            continue;
        }
        let num = multiply_integrate_unchecked(&zt, &zr, noise, rms_t * rms_r, shift_stream_id(origin, du, dv));
        map.ops.numerator_mults += d as u64;
        map.ops.numerator_adds += d as u64;
        map.ops.shifts += 1;
        let c = num / (t_var * r_var).sqrt();
        if c.abs() > 1.0 {
            map.set(i, ShiftStatus::Clamped, c.clamp(-1.0, 1.0));
        } else {
            map.set(i, ShiftStatus::Valid, c);
        }
    }
    Ok(map)
}

/// Noise fraction tolerated at a given dynamic range: `10^(-db/20)`.
pub fn dynamic_range_to_noise(db: f64) -> f64 {
    10f64.powf(-db / 20.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerEntry {
    pub name: &'static str,
    /// mW per unit.
    pub unit_power: f64,
    pub quantity: usize,
}

impl PowerEntry {
    pub fn power(&self) -> f64 {
        self.unit_power * self.quantity as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerBudget {
    pub entries: Vec<PowerEntry>,
    /// mW.
    pub total: f64,
}

/// Power of the analog correlator for `channels` sensor channels.
///
/// Channels pair up into template/reference, so each pair shares one
/// multiplier and one integrator, while every channel has its own low-pass
/// filter and summer.
pub fn power_budget(channels: usize) -> Result<PowerBudget> {
    if !channels.is_multiple_of(2) {
        return Err(Error::arg(format!("channel count must be even, got {channels}")));
    }
    let entries = vec![
        PowerEntry { name: "LPF", unit_power: 2.8, quantity: channels },
        PowerEntry { name: "Summer", unit_power: 0.549, quantity: channels },
        PowerEntry { name: "Multiplier", unit_power: 0.00183, quantity: channels / 2 },
        PowerEntry { name: "Integrator", unit_power: 0.024, quantity: channels / 2 },
    ];
    let total = entries.iter().map(PowerEntry::power).sum();
    Ok(PowerBudget { entries, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diag::{build_diag_tables, ncc_diag};
    use crate::ncc::best_shift;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn boxcar_warmup() {
        let out = moving_average(&[1.0, 3.0, 5.0], MovingAverageConfig::boxcar(2).unwrap()).unwrap();
        assert_eq!(out, vec![1.0, 2.0, 4.0]);
        let z = zero_mean_stream(&[1.0, 3.0, 5.0], MovingAverageConfig::boxcar(2).unwrap()).unwrap();
        assert_eq!(z, vec![0.0, 1.0, 1.0]);
    }

    #[test]
    fn constant_signal_is_a_fixed_point() {
        let c = vec![0.37; 50];
        for cfg in [
            MovingAverageConfig::boxcar(1).unwrap(),
            MovingAverageConfig::boxcar(7).unwrap(),
            MovingAverageConfig::boxcar(80).unwrap(),
            MovingAverageConfig::single_pole(0.3).unwrap(),
            MovingAverageConfig::single_pole(1.0).unwrap(),
        ] {
            for v in moving_average(&c, cfg).unwrap() {
                assert!((v - 0.37).abs() < 1e-14);
            }
            for v in zero_mean_stream(&c, cfg).unwrap() {
                assert!(v.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn unit_alpha_passes_signal_through() {
        let s = [0.1, 0.9, 0.4, 0.7];
        assert_eq!(moving_average(&s, MovingAverageConfig::single_pole(1.0).unwrap()).unwrap(), s.to_vec());
        assert!(zero_mean_stream(&s, MovingAverageConfig::single_pole(1.0).unwrap()).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_window_boxcar_ends_at_block_mean() {
        let s = [0.2, 0.8, 0.5, 0.1, 0.9];
        let z = zero_mean_stream(&s, MovingAverageConfig::boxcar(s.len()).unwrap()).unwrap();
        let mean = s.iter().sum::<f64>() / 5.0;
        assert!((z[4] - (0.9 - mean)).abs() < 1e-15);
    }

    #[test]
    fn filter_argument_errors() {
        assert!(moving_average(&[], MovingAverageConfig::Boxcar { window_len: 2 }).is_err());
        assert!(MovingAverageConfig::boxcar(0).is_err());
        assert!(MovingAverageConfig::single_pole(0.0).is_err());
        assert!(MovingAverageConfig::single_pole(1.5).is_err());
    }

    #[test]
    fn rms_examples() {
        assert!((rms(&[-0.4; 6]).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(rms(&[3.0, 4.0]).unwrap(), 12.5f64.sqrt());
        assert_eq!(rms(&[0.0]).unwrap(), 0.0);
        assert!(rms(&[]).is_err());
    }

    #[test]
    fn noiseless_multiply_integrate_is_a_dot_product() {
        let n = NoiseModel::noiseless();
        assert_eq!(multiply_integrate(&[1.0, 2.0], &[3.0, 4.0], &n, 1.0, 1.0, 0).unwrap(), 11.0);
        let a = [0.5, -0.25, -0.25];
        let v = multiply_integrate(&a, &a, &n, 0.0, 0.0, 0).unwrap();
        assert!((v - BlockStats::of(&a).variance_sum).abs() < 1e-15);
        assert!(multiply_integrate(&[1.0], &[1.0, 2.0], &n, 1.0, 1.0, 0).is_err());
    }

    #[test]
    fn multiplier_noise_has_requested_spread() {
        let noise = NoiseModel::new(0.01, 0.0, 99).unwrap();
        let (rms_a, rms_b) = (0.3, 0.7);
        let n = 100_000u64;
        let diffs: Vec<f64> = (0..n)
            .map(|id| multiply_integrate(&[0.2], &[0.5], &noise, rms_a, rms_b, id).unwrap() - 0.1)
            .collect();
        let mean = diffs.iter().sum::<f64>() / n as f64;
        let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let expected = 0.01 * rms_a * rms_b;
        assert!((sd / expected - 1.0).abs() < 0.02, "sd {sd} vs {expected}");
    }

    #[test]
    fn integrator_noise_scales_with_sqrt_len() {
        let noise = NoiseModel::new(0.0, 0.2, 5).unwrap();
        let a = vec![0.0; 16];
        let n = 20_000u64;
        let sd = ((0..n)
            .map(|id| multiply_integrate(&a, &a, &noise, 1.0, 1.0, id).unwrap().powi(2))
            .sum::<f64>()
            / n as f64)
            .sqrt();
        assert!((sd / (0.2 * 4.0) - 1.0).abs() < 0.03, "sd {sd}");
    }

    #[test]
    fn per_image_cadence_shares_one_draw() {
        let noise = NoiseModel { cadence: NoiseCadence::PerImage, ..NoiseModel::new(0.1, 0.0, 3).unwrap() };
        let z = vec![0.0; 4];
        let a = multiply_integrate(&z, &z, &noise, 1.0, 1.0, 1).unwrap();
        let b = multiply_integrate(&z, &z, &noise, 1.0, 1.0, 2).unwrap();
        assert_eq!(a, b);
        let single = multiply_integrate(&[0.0], &[0.0], &noise, 1.0, 1.0, 1).unwrap();
        assert!((a - 4.0 * single).abs() < 1e-15);
    }

    fn uniform_image(seed: u64, w: usize, h: usize) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(w, h, |_, _| rng.random::<f64>()).unwrap()
    }

    #[test]
    fn noiseless_stream_self_match_is_near_one() {
        // Independent check: the exact diagonal NCC of the block with itself is 1.
        let reference = uniform_image(31, 160, 160);
        let block = reference.crop(16, 16, 128, 128).unwrap();
        let tables = build_diag_tables(&reference);
        let exact = ncc_diag(&block, &reference, (16, 16), ShiftRange::symmetric(0), Orientation::Main).unwrap();
        assert!((exact.get(0, 0).unwrap() - 1.0).abs() < 1e-12);
        let map = ncc_stream(
            &block,
            &reference,
            (16, 16),
            ShiftRange::symmetric(2),
            Orientation::Main,
            MovingAverageConfig::boxcar(128).unwrap(),
            &NoiseModel::noiseless(),
            &tables,
        )
        .unwrap();
        let c = map.get(0, 0).unwrap();
        assert!((c - 1.0).abs() < 0.05, "C(0,0) = {c}");
        assert_eq!(best_shift(&map).map(|b| (b.du, b.dv)), Some((0, 0)));
    }

    #[test]
    fn unit_alpha_flags_every_shift() {
        let reference = uniform_image(32, 40, 40);
        let block = reference.crop(10, 10, 16, 16).unwrap();
        let map = ncc_stream(
            &block,
            &reference,
            (10, 10),
            ShiftRange::symmetric(3),
            Orientation::Main,
            MovingAverageConfig::single_pole(1.0).unwrap(),
            &NoiseModel::noiseless(),
            &build_diag_tables(&reference),
        )
        .unwrap();
        assert!(map.status.iter().all(|&s| s == ShiftStatus::ZeroVariance));
    }

    #[test]
    fn stream_noise_is_reproducible() {
        let reference = uniform_image(33, 48, 48);
        let block = reference.crop(16, 16, 16, 16).unwrap();
        let tables = build_diag_tables(&reference);
        let noise = NoiseModel::new(0.1, 0.2, 77).unwrap();
        let run = || {
            ncc_stream(&block, &reference, (16, 16), ShiftRange::symmetric(4), Orientation::Main, MovingAverageConfig::boxcar(16).unwrap(), &noise, &tables)
                .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        // A sub-range evaluates the shared shifts to the same bits.
        let sub = ncc_stream(&block, &reference, (16, 16), ShiftRange::new(1, 2, -1, 0).unwrap(), Orientation::Main, MovingAverageConfig::boxcar(16).unwrap(), &noise, &tables).unwrap();
        for (du, dv) in sub.range.iter() {
            assert_eq!(sub.get(du, dv).map(f64::to_bits), a.get(du, dv).map(f64::to_bits));
        }
    }

    #[test]
    fn dynamic_range_conversion() {
        assert_eq!(dynamic_range_to_noise(40.0), 0.01);
        assert_eq!(dynamic_range_to_noise(0.0), 1.0);
        assert!((dynamic_range_to_noise(20.0) - 0.1).abs() < 1e-16);
        let mut last = f64::INFINITY;
        for db in 0..=120 {
            let f = dynamic_range_to_noise(db as f64 * 0.5);
            assert!(f < last);
            last = f;
        }
    }

    #[test]
    fn power_budget_rows_and_totals() {
        let b = power_budget(2).unwrap();
        assert!((b.total - 6.723).abs() < 0.001);
        assert_eq!(b.entries.iter().map(|e| e.quantity).collect::<Vec<_>>(), vec![2, 2, 1, 1]);
        assert_eq!(power_budget(0).unwrap().total, 0.0);
        let t128 = power_budget(128).unwrap().total;
        assert!((t128 - 430.31).abs() < 0.02, "{t128}");
        assert!(power_budget(3).is_err());
        for c in (0..400).step_by(2) {
            let b = power_budget(c).unwrap();
            let direct: f64 = b.entries.iter().map(|e| e.unit_power * e.quantity as f64).sum();
            assert!((b.total - direct).abs() < 0.01);
            assert!((b.total - c as f64 * power_budget(2).unwrap().total / 2.0).abs() < 1e-9);
        }
    }
}
