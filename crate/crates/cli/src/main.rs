use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stereo_ncc_cli::commands::{self, format_power_table, Summary};
use stereo_ncc_cli::config::{parse_span, DEFAULT_PATTERN};
use stereo_ncc_cli::{diagnostic, exit_code, Command, Input, RunConfig, UsageError, EXIT_USAGE};

#[derive(Parser)]
#[command(name = "stereo-ncc", version, about = "NCC block matching for stereo image alignment")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic stereo pair and its ground truth.
    Gen(Common),
    /// Estimate block disparities, warp the template and score the result.
    Align(Common),
    /// Time full-fast against diag-fast and count numerator operations.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 5)]
        runs: usize,
    },
    /// Stream alignment over multiplier noise fractions and seeds.
    NoiseSweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.10, 0.20])]
        fractions: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        seeds: usize,
    },
    /// Align after a uniform or random intensity change of the template.
    Robustness {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "uniform", value_parser = ["uniform", "random"])]
        mode: String,
        /// Scale factor (uniform, default 0.1) or amplitude (random, default 0.5).
        #[arg(long)]
        param: Option<f64>,
    },
    /// Power table of the analog correlator.
    Power {
        #[arg(long, default_value_t = 64)]
        channels: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Re-run the experiment recorded in an output file's header.
    Replay {
        file: PathBuf,
        /// Write to this directory instead of the recorded one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, requires = "reference")]
    template: Option<PathBuf>,
    #[arg(long, requires = "template")]
    reference: Option<PathBuf>,
    #[arg(long, default_value = "diag", value_parser = ["full", "full-fast", "diag", "diag-fast", "stream"])]
    method: String,
    #[arg(long, default_value_t = 32)]
    block: usize,
    #[arg(long, default_value_t = 0.10)]
    crop: f64,
    /// MIN:MAX, default ±block/8.
    #[arg(long, allow_hyphen_values = true)]
    search_du: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    search_dv: Option<String>,
    /// boxcar:L or pole:ALPHA; default boxcar over the block size.
    #[arg(long, default_value = "auto")]
    ma: String,
    #[arg(long, default_value_t = 0.0)]
    noise_mult: f64,
    #[arg(long, default_value_t = 0.20)]
    noise_int: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value = "main", value_parser = ["main", "anti"])]
    orientation: String,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Synthetic pair width (ignored with --template).
    #[arg(long, default_value_t = 512)]
    width: usize,
    #[arg(long, default_value_t = 512)]
    height: usize,
    /// uniform:DU,DV or quad:DU,DV/DU,DV/DU,DV/DU,DV.
    #[arg(long, default_value = DEFAULT_PATTERN, allow_hyphen_values = true)]
    pattern: String,
    #[arg(long, default_value_t = 0.01)]
    noise_floor: f64,
}

impl Common {
    fn into_config(self, command: Command) -> Result<RunConfig, UsageError> {
        let default_span = {
            let r = (self.block / 8) as i32;
            [-r, r]
        };
        let span = |s: &Option<String>| s.as_deref().map_or(Ok(default_span), parse_span);
        let input = match (self.template, self.reference) {
            (Some(template), Some(reference)) => Input::Files { template, reference },
            _ => Input::Synthetic { width: self.width, height: self.height, pattern: self.pattern, noise_floor: self.noise_floor },
        };
        Ok(RunConfig {
            command,
            method: self.method,
            block: self.block,
            crop: self.crop,
            search_du: span(&self.search_du)?,
            search_dv: span(&self.search_dv)?,
            orientation: self.orientation,
            ma: self.ma,
            noise_mult: self.noise_mult,
            noise_int: self.noise_int,
            seed: self.seed,
            input,
            out: self.out,
        })
    }
}

fn config_from(cmd: Cmd) -> anyhow::Result<RunConfig> {
    Ok(match cmd {
        Cmd::Gen(c) => c.into_config(Command::Gen)?,
        Cmd::Align(c) => c.into_config(Command::Align)?,
        Cmd::Bench { common, runs } => common.into_config(Command::Bench { runs })?,
        Cmd::NoiseSweep { common, fractions, seeds } => common.into_config(Command::NoiseSweep { fractions, seeds })?,
        Cmd::Robustness { common, mode, param } => {
            let parameter = param.unwrap_or(if mode == "uniform" { 0.1 } else { 0.5 });
            common.into_config(Command::Robustness { mode, parameter })?
        }
        Cmd::Power { channels, out } => RunConfig { command: Command::Power { channels }, out, ..RunConfig::default() },
        Cmd::Replay { file, out } => {
            let text = std::fs::read(&file).map_err(|source| stereo_ncc::Error::Io { path: file.clone(), source })?;
            let mut cfg = RunConfig::from_header(&String::from_utf8_lossy(&text))?;
            if let Some(out) = out {
                cfg.out = out;
            }
            cfg
        }
    })
}

fn report(summary: &Summary) {
    match summary {
        Summary::Gen(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
        }
        Summary::Align(s) => {
            println!("corr_before {:.6}  corr_after {:.6}  improvement {:.3}%", s.corr_before, s.corr_after, s.improvement_pct);
            println!("blocks {}  invalid {}", s.blocks, s.invalid_blocks);
            if let Some(m) = s.match_rate {
                println!("ground-truth match {:.1}%", 100.0 * m);
            }
        }
        Summary::Bench(b) => {
            for row in [&b.full, &b.diag] {
                println!("{:<10} median {:>10.3} ms  mults/shift {}", row.method.as_str(), row.median_ms, row.ops.mults_per_shift().unwrap_or(0));
            }
            println!("speedup {:.2}x  multiply ratio {}", b.speedup, b.mult_ratio);
        }
        Summary::NoiseSweep(rows) => {
            for r in rows {
                println!(
                    "multiplier {:<6} corr_after {:.4} ± {:.4}  match {:.1}% ± {:.1}",
                    r.fraction,
                    r.corr_after_mean,
                    r.corr_after_sd,
                    100.0 * r.match_rate_mean,
                    100.0 * r.match_rate_sd
                );
            }
        }
        Summary::Robustness(r) => {
            for (name, row) in [("baseline", &r.baseline), ("perturbed", &r.perturbed)] {
                println!(
                    "{name:<10} corr {:.4} -> {:.4}  match {:.1}%",
                    row.corr_before,
                    row.corr_after,
                    100.0 * row.match_rate
                );
            }
            println!("identical to baseline: {}", r.identical_to_baseline);
        }
        Summary::Power(b) => print!("{}", format_power_table(b)),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = config_from(cli.command).and_then(|cfg| commands::run(&cfg));
    match result {
        Ok(summary) => {
            report(&summary);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("stereo-ncc: {}", diagnostic(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
