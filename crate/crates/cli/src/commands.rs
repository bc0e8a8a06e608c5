//! The subcommands. Each takes a [`RunConfig`], writes its files into
//! `config.out`, and returns a summary for the caller to print.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::Context;
use stereo_ncc::align::{
    align_pair, block_truth, estimate_disparity_counted, improvement_percent, match_rate, partition_template,
    random_intensity_perturbation, scale_intensity, Alignment, DisparityField, Method,
};
use stereo_ncc::imageio::{load_pgm, make_synthetic_stereo, save_pgm, RegionTruth};
use stereo_ncc::ncc::OpCount;
use stereo_ncc::stream::{power_budget, NoiseModel, PowerBudget};
use stereo_ncc::GrayImage;

use crate::config::{Command, Input, Resolved, RunConfig};
use crate::table::{num, pgm_comments, Table};
use crate::{Result, UsageError};

pub const PGM_MAXVAL: u32 = 65535;

pub struct Inputs {
    pub template: GrayImage,
    pub reference: GrayImage,
    pub truth: Option<RegionTruth>,
}

pub fn load_inputs(config: &RunConfig, resolved: &Resolved) -> Result<Inputs> {
    match (&config.input, &resolved.synthetic) {
        (Input::Files { template, reference }, _) => Ok(Inputs { template: load_pgm(template)?, reference: load_pgm(reference)?, truth: None }),
        (Input::Synthetic { .. }, Some(spec)) => {
            let pair = make_synthetic_stereo(spec)?;
            Ok(Inputs { template: pair.template, reference: pair.reference, truth: Some(pair.truth) })
        }
        (Input::Synthetic { .. }, None) => unreachable!("resolve builds a spec for synthetic input"),
    }
}

fn out_dir(config: &RunConfig) -> Result<PathBuf> {
    std::fs::create_dir_all(&config.out).map_err(|source| stereo_ncc::Error::Io { path: config.out.clone(), source })?;
    Ok(config.out.clone())
}

fn expect_command(config: &RunConfig, name: &str) -> Result<()> {
    if config.command.name() != name {
        return Err(UsageError(format!("config is for '{}', not '{name}'", config.command.name())).into());
    }
    Ok(())
}

/// Runs whichever subcommand the config names.
pub fn run(config: &RunConfig) -> Result<Summary> {
    Ok(match config.command {
        Command::Gen => Summary::Gen(cmd_gen(config)?),
        Command::Align => Summary::Align(cmd_align(config)?),
        Command::Bench { .. } => Summary::Bench(cmd_bench(config)?),
        Command::NoiseSweep { .. } => Summary::NoiseSweep(cmd_noise_sweep(config)?),
        Command::Robustness { .. } => Summary::Robustness(cmd_robustness(config)?),
        Command::Power { .. } => Summary::Power(cmd_power(config)?),
    })
}

#[derive(Debug, Clone)]
pub enum Summary {
    Gen(Vec<PathBuf>),
    Align(AlignSummary),
    Bench(BenchReport),
    NoiseSweep(Vec<SweepSummary>),
    Robustness(RobustnessReport),
    Power(PowerBudget),
}

pub fn cmd_gen(config: &RunConfig) -> Result<Vec<PathBuf>> {
    expect_command(config, "gen")?;
    let resolved = config.resolve()?;
    let Some(spec) = &resolved.synthetic else {
        return Err(UsageError("gen needs synthetic input, not --template/--reference".into()).into());
    };
    let pair = make_synthetic_stereo(spec)?;
    let dir = out_dir(config)?;
    let comments = pgm_comments("gen", config);
    let (t, r, c) = (dir.join("template.pgm"), dir.join("reference.pgm"), dir.join("truth.csv"));
    save_pgm(&pair.template, &t, PGM_MAXVAL, &comments)?;
    save_pgm(&pair.reference, &r, PGM_MAXVAL, &comments)?;
    let mut table = Table::new("truth", config, &["region", "x0", "y0", "width", "height", "du", "dv"]);
    for (i, reg) in pair.truth.regions.iter().enumerate() {
        table.push(vec![
            i.to_string(),
            reg.x0.to_string(),
            reg.y0.to_string(),
            reg.width.to_string(),
            reg.height.to_string(),
            reg.du.to_string(),
            reg.dv.to_string(),
        ]);
    }
    table.write(&c)?;
    Ok(vec![t, r, c])
}

#[derive(Debug, Clone)]
pub struct AlignSummary {
    pub corr_before: f64,
    pub corr_after: f64,
    pub improvement_pct: f64,
    /// Only for synthetic input.
    pub match_rate: Option<f64>,
    pub blocks: usize,
    pub invalid_blocks: usize,
}

fn disparity_table(kind: &str, config: &RunConfig, field: &DisparityField) -> Table {
    let mut t = Table::new(kind, config, &["block_row", "block_col", "du", "dv", "coeff", "status"]);
    for r in 0..field.rows {
        for c in 0..field.cols {
            let e = field.get(r, c);
            t.push(vec![r.to_string(), c.to_string(), num(e.du), num(e.dv), num(e.coeff), e.status.as_str().to_string()]);
        }
    }
    t
}

/// `|d| / limit` as a grayscale map; `limit` is the largest search offset
/// along that axis.
fn magnitude_map(values: &[f64], width: usize, height: usize, limit: i32) -> Result<GrayImage> {
    let scale = if limit == 0 { 0.0 } else { 1.0 / limit as f64 };
    let data = values.iter().map(|v| (v.abs() * scale).min(1.0)).collect();
    Ok(GrayImage::new(width, height, data)?)
}

pub fn cmd_align(config: &RunConfig) -> Result<AlignSummary> {
    expect_command(config, "align")?;
    let resolved = config.resolve()?;
    let inputs = load_inputs(config, &resolved)?;
    let al = align_pair(&inputs.template, &inputs.reference, config.block, config.crop, &resolved.options)?;
    let improvement_pct = improvement_percent(al.corr_before, al.corr_after)?;
    let dir = out_dir(config)?;

    disparity_table("disparity", config, &al.filled).write(&dir.join("disparity.csv"))?;
    let (w, h) = (al.dense.extent.width, al.dense.extent.height);
    let lim_x = config.search_du[0].abs().max(config.search_du[1].abs());
    let lim_y = config.search_dv[0].abs().max(config.search_dv[1].abs());
    let comments = pgm_comments("align", config);
    save_pgm(&magnitude_map(&al.dense.du, w, h, lim_x)?, dir.join("disparity_x.pgm"), PGM_MAXVAL, &comments)?;
    save_pgm(&magnitude_map(&al.dense.dv, w, h, lim_y)?, dir.join("disparity_y.pgm"), PGM_MAXVAL, &comments)?;
    save_pgm(&al.aligned, dir.join("aligned.pgm"), PGM_MAXVAL, &comments)?;

    let mut metrics = Table::new("metrics", config, &["corr_before", "corr_after", "improvement_pct"]);
    metrics.push(vec![num(al.corr_before), num(al.corr_after), num(improvement_pct)]);
    metrics.write(&dir.join("metrics.csv"))?;

    Ok(AlignSummary {
        corr_before: al.corr_before,
        corr_after: al.corr_after,
        improvement_pct,
        match_rate: inputs.truth.as_ref().map(|t| match_rate(&al.measured, &block_truth(t, &al.grid))),
        blocks: al.measured.entries.len(),
        invalid_blocks: al.measured.entries.iter().filter(|e| e.status != stereo_ncc::align::BlockStatus::Valid).count(),
    })
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub method: Method,
    pub times_ms: Vec<f64>,
    pub median_ms: f64,
    pub ops: OpCount,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub block: usize,
    pub blocks: usize,
    pub full: BenchRow,
    pub diag: BenchRow,
    /// Full-fast median over diag-fast median.
    pub speedup: f64,
    /// Numerator multiplies per shift, full over diag.
    pub mult_ratio: f64,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn mult_ratio(a: &OpCount, b: &OpCount) -> f64 {
    match (a.mults_per_shift(), b.mults_per_shift()) {
        (Some(x), Some(y)) if y > 0 => x as f64 / y as f64,
        _ => f64::NAN,
    }
}

/// Times full-fast against diag-fast on the same inputs: one untimed warmup
/// each, then `runs` timed runs, alternating methods.
pub fn cmd_bench(config: &RunConfig) -> Result<BenchReport> {
    expect_command(config, "bench")?;
    let Command::Bench { runs } = config.command else { unreachable!() };
    let resolved = config.resolve()?;
    let inputs = load_inputs(config, &resolved)?;
    let grid = partition_template(&inputs.template, config.block, config.crop)?;
    let opts = |m: Method| {
        let mut o = resolved.options;
        o.method = m;
        o
    };
    let (full_opts, diag_opts) = (opts(Method::FullFast), opts(Method::DiagFast));
    let timed = |o| -> Result<(f64, OpCount)> {
        let start = Instant::now();
        let (_, ops) = estimate_disparity_counted(&inputs.template, &inputs.reference, &grid, o)?;
        Ok((start.elapsed().as_secs_f64() * 1e3, ops))
    };
    let (_, full_ops) = timed(&full_opts)?;
    let (_, diag_ops) = timed(&diag_opts)?;
    let (mut full_t, mut diag_t) = (Vec::with_capacity(runs), Vec::with_capacity(runs));
    for _ in 0..runs {
        let (t, ops) = timed(&full_opts)?;
        anyhow::ensure!(ops == full_ops, "operation counts changed between runs");
        full_t.push(t);
        let (t, ops) = timed(&diag_opts)?;
        anyhow::ensure!(ops == diag_ops, "operation counts changed between runs");
        diag_t.push(t);
    }
    let full = BenchRow { method: Method::FullFast, median_ms: median(&full_t), times_ms: full_t, ops: full_ops };
    let diag = BenchRow { method: Method::DiagFast, median_ms: median(&diag_t), times_ms: diag_t, ops: diag_ops };
    let report = BenchReport {
        block: config.block,
        blocks: grid.len(),
        speedup: full.median_ms / diag.median_ms,
        mult_ratio: mult_ratio(&full.ops, &diag.ops),
        full,
        diag,
    };

    let dir = out_dir(config)?;
    let mut ops = Table::new(
        "bench-ops",
        config,
        &["method", "block", "blocks", "shifts", "numerator_mults", "numerator_adds", "mults_per_shift", "mult_ratio"],
    );
    let mut timing = Table::new("bench-timing", config, &["method", "runs", "median_ms", "min_ms", "max_ms", "median_ms_per_block", "speedup"]);
    for row in [&report.full, &report.diag] {
        ops.push(vec![
            row.method.to_string(),
            report.block.to_string(),
            report.blocks.to_string(),
            row.ops.shifts.to_string(),
            row.ops.numerator_mults.to_string(),
            row.ops.numerator_adds.to_string(),
            row.ops.mults_per_shift().map_or("NaN".into(), |m| m.to_string()),
            num(mult_ratio(&report.full.ops, &row.ops)),
        ]);
        let min = row.times_ms.iter().copied().fold(f64::INFINITY, f64::min);
        let max = row.times_ms.iter().copied().fold(0.0, f64::max);
        timing.push(vec![
            row.method.to_string(),
            row.times_ms.len().to_string(),
            format!("{:.3}", row.median_ms),
            format!("{min:.3}"),
            format!("{max:.3}"),
            format!("{:.4}", row.median_ms / report.blocks as f64),
            format!("{:.3}", report.full.median_ms / row.median_ms),
        ]);
    }
    ops.write(&dir.join("bench_ops.csv"))?;
    timing.write(&dir.join("bench_timing.csv"))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub fraction: f64,
    pub seed: u64,
    pub corr_after: f64,
    pub match_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub fraction: f64,
    pub runs: Vec<SweepRun>,
    pub corr_after_mean: f64,
    pub corr_after_sd: f64,
    pub match_rate_mean: f64,
    pub match_rate_sd: f64,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Stream alignment for each multiplier fraction, over noise seeds
/// `seed, seed + 1, ...`. The texture seed stays fixed; the integrator
/// fraction is `noise_int`. Match rates are NaN for file input.
pub fn cmd_noise_sweep(config: &RunConfig) -> Result<Vec<SweepSummary>> {
    expect_command(config, "noise-sweep")?;
    let Command::NoiseSweep { fractions, seeds } = &config.command else { unreachable!() };
    let resolved = config.resolve()?;
    let inputs = load_inputs(config, &resolved)?;
    let grid = partition_template(&inputs.template, config.block, config.crop)?;
    let truth = inputs.truth.as_ref().map(|t| block_truth(t, &grid));

    let mut summaries = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let mut runs = Vec::with_capacity(*seeds);
        for k in 0..*seeds as u64 {
            let seed = config.seed.wrapping_add(k);
            let mut opts = resolved.options;
            opts.method = Method::Stream;
            opts.noise = NoiseModel::new(fraction, config.noise_int, seed)?;
            let al: Alignment = align_pair(&inputs.template, &inputs.reference, config.block, config.crop, &opts)?;
            let rate = truth.as_ref().map_or(f64::NAN, |t| match_rate(&al.measured, t));
            runs.push(SweepRun { fraction, seed, corr_after: al.corr_after, match_rate: rate });
        }
        let (corr_after_mean, corr_after_sd) = mean_sd(&runs.iter().map(|r| r.corr_after).collect::<Vec<_>>());
        let (match_rate_mean, match_rate_sd) = mean_sd(&runs.iter().map(|r| r.match_rate).collect::<Vec<_>>());
        summaries.push(SweepSummary { fraction, runs, corr_after_mean, corr_after_sd, match_rate_mean, match_rate_sd });
    }

    let dir = out_dir(config)?;
    let mut summary = Table::new(
        "noise-sweep",
        config,
        &["multiplier_fraction", "integrator_fraction", "seeds", "corr_after_mean", "corr_after_sd", "match_rate_mean", "match_rate_sd"],
    );
    let mut per_run = Table::new("noise-sweep-runs", config, &["multiplier_fraction", "integrator_fraction", "seed", "corr_after", "match_rate"]);
    for s in &summaries {
        summary.push(vec![
            num(s.fraction),
            num(config.noise_int),
            s.runs.len().to_string(),
            num(s.corr_after_mean),
            num(s.corr_after_sd),
            num(s.match_rate_mean),
            num(s.match_rate_sd),
        ]);
        for r in &s.runs {
            per_run.push(vec![num(r.fraction), num(config.noise_int), r.seed.to_string(), num(r.corr_after), num(r.match_rate)]);
        }
    }
    summary.write(&dir.join("noise_sweep.csv"))?;
    per_run.write(&dir.join("noise_sweep_runs.csv"))?;
    Ok(summaries)
}

#[derive(Debug, Clone)]
pub struct RobustnessRow {
    pub corr_before: f64,
    pub corr_after: f64,
    pub improvement_pct: f64,
    pub match_rate: f64,
}

#[derive(Debug, Clone)]
pub struct RobustnessReport {
    pub baseline: RobustnessRow,
    pub perturbed: RobustnessRow,
    /// Same shift and status for every measured block.
    pub identical_to_baseline: bool,
    /// Largest coefficient change over blocks valid in both runs.
    pub max_coeff_diff: f64,
    pub baseline_field: DisparityField,
    pub perturbed_field: DisparityField,
}

/// Aligns the unperturbed pair and the pair with a perturbed template.
/// `uniform` scales the template by the parameter; `random` multiplies each
/// pixel by a factor in `[1 - p, 1 + p]` drawn from `seed`.
pub fn cmd_robustness(config: &RunConfig) -> Result<RobustnessReport> {
    expect_command(config, "robustness")?;
    let Command::Robustness { mode, parameter } = &config.command else { unreachable!() };
    let resolved = config.resolve()?;
    let inputs = load_inputs(config, &resolved)?;
    let perturbed = match mode.as_str() {
        "uniform" => scale_intensity(&inputs.template, *parameter)?,
        _ => random_intensity_perturbation(&inputs.template, config.seed, *parameter)?,
    };
    let row = |template: &GrayImage| -> Result<(RobustnessRow, DisparityField)> {
        let al = align_pair(template, &inputs.reference, config.block, config.crop, &resolved.options)?;
        let rate = inputs.truth.as_ref().map_or(f64::NAN, |t| match_rate(&al.measured, &block_truth(t, &al.grid)));
        let improvement_pct = improvement_percent(al.corr_before, al.corr_after)?;
        Ok((RobustnessRow { corr_before: al.corr_before, corr_after: al.corr_after, improvement_pct, match_rate: rate }, al.measured))
    };
    let (baseline, baseline_field) = row(&inputs.template)?;
    let (perturbed, perturbed_field) = row(&perturbed)?;
    let max_coeff_diff = baseline_field
        .entries
        .iter()
        .zip(&perturbed_field.entries)
        .filter(|(a, b)| a.coeff.is_finite() && b.coeff.is_finite())
        .map(|(a, b)| (a.coeff - b.coeff).abs())
        .fold(0.0, f64::max);
    let report = RobustnessReport {
        identical_to_baseline: perturbed_field.same_shifts(&baseline_field),
        max_coeff_diff,
        baseline,
        perturbed,
        baseline_field,
        perturbed_field,
    };

    let dir = out_dir(config)?;
    let mut t = Table::new(
        "robustness",
        config,
        &["run", "mode", "parameter", "corr_before", "corr_after", "improvement_pct", "match_rate", "identical_to_baseline", "max_coeff_diff"],
    );
    for (name, r, same, diff) in [
        ("baseline", &report.baseline, true, 0.0),
        ("perturbed", &report.perturbed, report.identical_to_baseline, report.max_coeff_diff),
    ] {
        t.push(vec![
            name.to_string(),
            mode.clone(),
            num(*parameter),
            num(r.corr_before),
            num(r.corr_after),
            num(r.improvement_pct),
            num(r.match_rate),
            same.to_string(),
            num(diff),
        ]);
    }
    t.write(&dir.join("robustness.csv"))?;
    disparity_table("robustness-disparity", config, &report.perturbed_field).write(&dir.join("robustness_disparity.csv"))?;
    Ok(report)
}

/// Power table for `channels` and its CSV. Prints nothing; see
/// [`format_power_table`].
pub fn cmd_power(config: &RunConfig) -> Result<PowerBudget> {
    expect_command(config, "power")?;
    let Command::Power { channels } = config.command else { unreachable!() };
    let budget = power_budget(channels).map_err(|e| UsageError(e.to_string()))?;
    let dir = out_dir(config)?;
    let mut t = Table::new("power", config, &["component", "unit_power_mw", "quantity", "power_mw"]);
    for e in &budget.entries {
        t.push(vec![e.name.to_string(), num(e.unit_power), e.quantity.to_string(), num(e.power())]);
    }
    t.push(vec!["Total".into(), String::new(), String::new(), num(budget.total)]);
    t.write(&dir.join("power.csv")).context("writing power table")?;
    Ok(budget)
}

pub fn format_power_table(budget: &PowerBudget) -> String {
    let mut s = format!("{:<12}{:>16}{:>10}{:>14}\n", "Component", "Power/unit (mW)", "Quantity", "Power (mW)");
    for e in &budget.entries {
        s += &format!("{:<12}{:>16}{:>10}{:>14.4}\n", e.name, e.unit_power, e.quantity, e.power());
    }
    s += &format!("{:<12}{:>16}{:>10}{:>14.4}\n", "Total", "", "", budget.total);
    s
}
