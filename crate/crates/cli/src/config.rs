//! Run configuration shared by every subcommand.
//!
//! A `RunConfig` is plain data so it can be written into output headers and
//! read back. `RunConfig::resolve` turns it into core-library types and is
//! where all validation happens.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use stereo_ncc::align::{EstimateOptions, Method};
use stereo_ncc::diag::Orientation;
use stereo_ncc::imageio::SyntheticSpec;
use stereo_ncc::ncc::ShiftRange;
use stereo_ncc::stream::{MovingAverageConfig, NoiseModel};

use crate::UsageError;

pub const HEADER_PREFIX: &str = "# config=";

/// Quadrant shifts used when no pattern is given. They stay inside the
/// default ±block/8 search of a 32-pixel block.
pub const DEFAULT_PATTERN: &str = "quad:3,-2/-4,3/2,1/-1,-4";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    Gen,
    Align,
    Bench { runs: usize },
    NoiseSweep { fractions: Vec<f64>, seeds: usize },
    Robustness { mode: String, parameter: f64 },
    Power { channels: usize },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Align => "align",
            Command::Bench { .. } => "bench",
            Command::NoiseSweep { .. } => "noise-sweep",
            Command::Robustness { .. } => "robustness",
            Command::Power { .. } => "power",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Input {
    Files { template: PathBuf, reference: PathBuf },
    Synthetic { width: usize, height: usize, pattern: String, noise_floor: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub command: Command,
    pub method: String,
    pub block: usize,
    pub crop: f64,
    pub search_du: [i32; 2],
    pub search_dv: [i32; 2],
    pub orientation: String,
    /// `boxcar:L`, `pole:ALPHA`, or `auto` (boxcar over the block size).
    pub ma: String,
    pub noise_mult: f64,
    pub noise_int: f64,
    pub seed: u64,
    pub input: Input,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: Command::Align,
            method: "diag".into(),
            block: 32,
            crop: 0.10,
            search_du: [-4, 4],
            search_dv: [-4, 4],
            orientation: "main".into(),
            ma: "auto".into(),
            noise_mult: 0.0,
            noise_int: 0.20,
            seed: 7,
            input: Input::Synthetic { width: 512, height: 512, pattern: DEFAULT_PATTERN.into(), noise_floor: 0.01 },
            out: PathBuf::from("out"),
        }
    }
}

/// Validated form of a [`RunConfig`].
#[derive(Debug, Clone)]
pub struct Resolved {
    pub options: EstimateOptions,
    pub synthetic: Option<SyntheticSpec>,
}

impl RunConfig {
    pub fn header_line(&self) -> String {
        format!("{HEADER_PREFIX}{}", serde_json::to_string(self).expect("config serializes"))
    }

    /// Finds the `# config=` line in the text of an output file.
    pub fn from_header(text: &str) -> Result<Self, UsageError> {
        let line = text
            .lines()
            .take_while(|l| l.starts_with('#'))
            .find_map(|l| l.strip_prefix(HEADER_PREFIX))
            .ok_or_else(|| UsageError("no config header found".into()))?;
        serde_json::from_str(line).map_err(|e| UsageError(format!("bad config header: {e}")))
    }

    pub fn resolve(&self) -> Result<Resolved, UsageError> {
        let method: Method = self.method.parse().map_err(usage)?;
        let orientation: Orientation = self.orientation.parse().map_err(usage)?;
        if self.block < 2 {
            return Err(UsageError(format!("--block must be >= 2, got {}", self.block)));
        }
        let range = ShiftRange::new(self.search_du[0], self.search_du[1], self.search_dv[0], self.search_dv[1]).map_err(usage)?;
        let moving_average = parse_ma(&self.ma)?;
        let noise = NoiseModel::new(self.noise_mult, self.noise_int, self.seed).map_err(usage)?;
        let mut options = EstimateOptions::new(method, range);
        options.orientation = orientation;
        options.moving_average = moving_average;
        options.noise = noise;

        let synthetic = match &self.input {
            Input::Files { .. } => None,
            Input::Synthetic { width, height, pattern, noise_floor } => {
                let spec = synthetic_spec(*width, *height, pattern, self.seed, *noise_floor)?;
                spec.validate().map_err(usage)?;
                Some(spec)
            }
        };
        match &self.command {
            Command::Bench { runs } if *runs < 5 => return Err(UsageError(format!("--runs must be >= 5, got {runs}"))),
            Command::NoiseSweep { fractions, seeds } => {
                if fractions.is_empty() {
                    return Err(UsageError("--fractions is empty".into()));
                }
                if *seeds == 0 {
                    return Err(UsageError("--seeds must be >= 1".into()));
                }
                for &f in fractions {
                    NoiseModel::new(f, self.noise_int, 0).map_err(usage)?;
                }
            }
            Command::Robustness { mode, parameter } => match mode.as_str() {
                "uniform" if *parameter > 0.0 && parameter.is_finite() => {}
                "random" if (0.0..=1.0).contains(parameter) => {}
                "uniform" | "random" => return Err(UsageError(format!("parameter {parameter} is out of range for {mode}"))),
                other => return Err(UsageError(format!("unknown robustness mode '{other}' (uniform|random)"))),
            },
            _ => {}
        }
        Ok(Resolved { options, synthetic })
    }
}

fn usage(e: impl std::fmt::Display) -> UsageError {
    UsageError(e.to_string())
}

/// Parses `MIN:MAX`.
pub fn parse_span(s: &str) -> Result<[i32; 2], UsageError> {
    let bad = || UsageError(format!("expected MIN:MAX, got '{s}'"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let lo = a.trim().parse().map_err(|_| bad())?;
    let hi = b.trim().parse().map_err(|_| bad())?;
    if lo > hi {
        return Err(UsageError(format!("empty range '{s}'")));
    }
    Ok([lo, hi])
}

pub fn parse_ma(s: &str) -> Result<Option<MovingAverageConfig>, UsageError> {
    if s == "auto" {
        return Ok(None);
    }
    let bad = || UsageError(format!("expected boxcar:L or pole:ALPHA, got '{s}'"));
    let (kind, value) = s.split_once(':').ok_or_else(bad)?;
    let cfg = match kind {
        "boxcar" => MovingAverageConfig::boxcar(value.parse().map_err(|_| bad())?),
        "pole" => MovingAverageConfig::single_pole(value.parse().map_err(|_| bad())?),
        _ => return Err(bad()),
    };
    cfg.map(Some).map_err(usage)
}

/// Pattern grammar: `uniform:DU,DV` or `quad:DU,DV/DU,DV/DU,DV/DU,DV`
/// (top-left, top-right, bottom-left, bottom-right).
pub fn synthetic_spec(width: usize, height: usize, pattern: &str, seed: u64, noise_floor: f64) -> Result<SyntheticSpec, UsageError> {
    let bad = || UsageError(format!("bad pattern '{pattern}' (uniform:DU,DV or quad:DU,DV/DU,DV/DU,DV/DU,DV)"));
    let pair = |s: &str| -> Result<(i32, i32), UsageError> {
        let (a, b) = s.split_once(',').ok_or_else(bad)?;
        Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
    };
    let (kind, body) = pattern.split_once(':').ok_or_else(bad)?;
    let spec = match kind {
        "uniform" => {
            let (du, dv) = pair(body)?;
            SyntheticSpec::uniform(width, height, du, dv, seed, noise_floor)
        }
        "quad" => {
            let shifts: Vec<(i32, i32)> = body.split('/').map(pair).collect::<Result<_, _>>()?;
            let shifts: [(i32, i32); 4] = shifts.try_into().map_err(|_| bad())?;
            SyntheticSpec::quadrants(width, height, shifts, seed, noise_floor)
        }
        _ => return Err(bad()),
    };
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trips() {
        let mut c = RunConfig { command: Command::NoiseSweep { fractions: vec![0.2, 0.01], seeds: 3 }, ..RunConfig::default() };
        c.ma = "pole:0.25".into();
        let text = format!("# stereo-ncc noise-sweep\n{}\nfraction,seed\n", c.header_line());
        assert_eq!(RunConfig::from_header(&text).unwrap(), c);
    }

    #[test]
    fn spans() {
        assert_eq!(parse_span("-8:8").unwrap(), [-8, 8]);
        assert_eq!(parse_span("0:0").unwrap(), [0, 0]);
        assert!(parse_span("3:1").is_err());
        assert!(parse_span("3").is_err());
    }

    #[test]
    fn moving_average_specs() {
        assert_eq!(parse_ma("auto").unwrap(), None);
        assert_eq!(parse_ma("boxcar:16").unwrap(), Some(MovingAverageConfig::Boxcar { window_len: 16 }));
        assert!(parse_ma("pole:0").is_err());
        assert!(parse_ma("median:3").is_err());
    }

    #[test]
    fn patterns() {
        let s = synthetic_spec(64, 64, "quad:1,2/3,4/5,6/-1,-2", 0, 0.0).unwrap();
        assert_eq!(s.regions.len(), 4);
        assert_eq!((s.regions[3].du, s.regions[3].dv), (-1, -2));
        assert!(synthetic_spec(64, 64, "quad:1,2/3,4", 0, 0.0).is_err());
        assert!(synthetic_spec(64, 64, "uniform:1", 0, 0.0).is_err());
    }

    #[test]
    fn resolve_rejects_bad_values() {
        let bad = [
            RunConfig { method: "fft".into(), ..RunConfig::default() },
            RunConfig { orientation: "left".into(), ..RunConfig::default() },
            RunConfig { block: 1, ..RunConfig::default() },
            RunConfig { noise_mult: -0.1, ..RunConfig::default() },
            RunConfig { command: Command::Bench { runs: 3 }, ..RunConfig::default() },
            RunConfig { command: Command::Robustness { mode: "random".into(), parameter: 1.5 }, ..RunConfig::default() },
        ];
        for c in bad {
            assert!(c.resolve().is_err(), "{c:?}");
        }
        assert!(RunConfig::default().resolve().is_ok());
    }
}
