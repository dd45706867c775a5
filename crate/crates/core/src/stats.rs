//! Ensemble machinery over growth runs: the arrival-indexed martingale,
//! moment and Kolmogorov-Smirnov summaries, frontier-scaling tables, and the
//! Heyde-Brown normal-approximation diagnostics.
//!
//! Everything here is a pure function of its inputs. `run_ensemble` is the
//! only concurrent entry point; it fans independent runs out over a worker
//! pool and merges results by run index, so the output is bit-identical for
//! any worker count.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::growth::{
    band_width, grow_cylinder_poisson_with, grow_cylinder_with, GrowthError, GrowthTrace,
    KernelSet, WalkConfig,
};
use crate::harmonic::{
    discrepancy_pairing, lateness_pairing, theoretical_variance_circle, theoretical_variance_gff,
    HarmonicError, HarmonicModes, TestFunction, TestFunctionSpec,
};

/// Asymptotic 1% critical value of the one-sample Kolmogorov-Smirnov
/// statistic for `m` observations, `1.628 / sqrt(m)`.
pub fn ks_critical_1pct(m: usize) -> f64 {
    1.628 / (m as f64).sqrt()
}

/// Runs flagged when `inner + outer > constant * ln N`; the constant is a
/// knob because no principled numeric value exists for it.
pub const SCALING_EXCEED_CONSTANT: f64 = 4.0;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("an ensemble needs at least 2 runs, got {0}")]
    TooFewRuns(u32),
    #[error("{failed} of {runs} runs failed (budget is 1%); first: {first}")]
    ErrorBudgetExceeded { failed: usize, runs: u32, first: String },
    #[error("worker pool: {0}")]
    Concurrency(String),
    #[error(transparent)]
    Harmonic(#[from] HarmonicError),
    #[error(transparent)]
    Growth(#[from] GrowthError),
}

/// Path of the arrival-indexed martingale `M(s)` for one grown cluster,
/// with its increments and the pathwise moment sums the normal-approximation
/// diagnostics consume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleRecord {
    /// `M(0..=T)`; `values[0] = 0`.
    pub values: Vec<f64>,
    /// `values[s] - values[s-1]` for `s = 1..=T`.
    pub increments: Vec<f64>,
    /// Realized quadratic variation `sum of increment^2`.
    pub realized_qv: f64,
    /// `sum of increment^4`.
    pub fourth_moment_sum: f64,
}

impl MartingaleRecord {
    /// Accumulate a record from raw increments; values, quadratic variation
    /// and the fourth-moment sum all come from the same left-to-right pass,
    /// so the telescoping identity holds bit-exactly.
    pub fn from_increments(increments: Vec<f64>) -> Self {
        let mut values = Vec::with_capacity(increments.len() + 1);
        values.push(0.0);
        let (mut m, mut qv, mut m4) = (0.0f64, 0.0f64, 0.0f64);
        for &d in &increments {
            m += d;
            qv += d * d;
            m4 += (d * d) * (d * d);
            values.push(m);
        }
        Self { values, increments, realized_qv: qv, fourth_moment_sum: m4 }
    }

    /// `M(T)`, the terminal value.
    pub fn final_value(&self) -> f64 {
        *self.values.last().expect("records always hold M(0) = 0")
    }
}

/// Martingale of a discrete-time trace: after `s` arrivals,
/// `M(s) = (1/N) * sum of psi0 over the first s settled sites`. The base
/// rows are full and contribute exactly zero, so `M(0) = 0`.
///
/// The trace must be discrete-time with `T = floor(y0 N^2)` particles;
/// evaluation errors from sites outside the exponential guard band
/// propagate.
pub fn track_martingale(
    trace: &GrowthTrace,
    tf: &TestFunction,
    y0: f64,
) -> Result<MartingaleRecord, HarmonicError> {
    if trace.is_poisson() {
        return Err(HarmonicError::WrongTraceKind { expected: "discrete-time" });
    }
    let n = trace.n();
    let nf = f64::from(n);
    let expected = (y0 * nf * nf).floor() as u64;
    if trace.particles() != expected {
        return Err(HarmonicError::TraceMismatch { particles: trace.particles(), expected });
    }
    let modes = HarmonicModes::new(tf, n, trace.particles() as f64)?;
    let mut increments = Vec::with_capacity(trace.arrivals().len());
    for &s in trace.arrivals() {
        increments.push(modes.eval(s)? / nf);
    }
    Ok(MartingaleRecord::from_increments(increments))
}

/// Scalar collected per run of an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    /// `discrepancy_pairing` of a discrete-time trace at `T = floor(y0 N^2)`.
    Discrepancy,
    /// `lateness_pairing` of a Poisson-clock trace run to `t_max`.
    Lateness,
    /// Terminal martingale value `M(T)`, with realized quadratic variation
    /// kept per run.
    Martingale,
}

/// Full description of an ensemble; serializable so summaries can echo it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n: u32,
    pub statistic: Statistic,
    /// Height parameter for the discrete statistics: runs use
    /// `T = floor(y0 N^2)` particles. Ignored by `Lateness`.
    pub y0: f64,
    /// Poisson horizon for `Lateness`; `None` defaults to `1.6 c2 N^2`,
    /// enough to fill the support band with margin.
    #[serde(default)]
    pub t_max: Option<f64>,
    pub runs: u32,
    pub seed: u64,
    pub tf: TestFunctionSpec,
    /// `None` means the default walk for the circumference.
    #[serde(default)]
    pub walk: Option<WalkConfig>,
    /// Worker threads; `None` picks the runtime default. Never affects
    /// output values.
    #[serde(default)]
    pub workers: Option<usize>,
}

/// Result of one run: either the collected scalar (plus, for martingale
/// ensembles, the pathwise moment sums) or the error that lost it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    /// Run index, equal to the RNG stream id.
    pub run: u32,
    pub value: Option<f64>,
    pub realized_qv: Option<f64>,
    pub fourth_moment_sum: Option<f64>,
    pub error: Option<String>,
}

/// The summary emitted as `summary.json`; field names and order are the
/// on-disk contract. `var_ratio` is NaN (serialized as null) when the
/// theoretical variance vanishes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub runs: u32,
    pub sample_mean: f64,
    pub sample_var: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub ks_stat: f64,
    pub ks_critical_1pct: f64,
    pub theoretical_var: f64,
    pub var_ratio: f64,
    pub seed: u64,
    pub config_echo: EnsembleConfig,
    pub errors: Vec<String>,
}

/// An executed ensemble: the on-disk summary plus the per-run values and
/// outcomes backing it.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub summary: EnsembleSummary,
    /// Scalars of the successful runs, in run order.
    pub values: Vec<f64>,
    /// One entry per run, successful or not, in run order.
    pub outcomes: Vec<RunOutcome>,
}

impl Ensemble {
    /// `(seed, stream_id)` of every run, successful or not.
    pub fn seed_manifest(&self) -> Vec<(u64, u64)> {
        self.outcomes.iter().map(|o| (self.summary.seed, u64::from(o.run))).collect()
    }
}

/// First four standardized sample moments. Variance uses the unbiased n-1
/// divisor; skewness and excess kurtosis use the population convention
/// `m3 / m2^{3/2}` and `m4 / m2^2 - 3`, and are 0 for degenerate samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub var: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

pub fn sample_moments(values: &[f64]) -> Moments {
    let n = values.len();
    if n == 0 {
        return Moments { mean: 0.0, var: 0.0, skewness: 0.0, excess_kurtosis: 0.0 };
    }
    // Constant samples get exact zeros instead of mean-rounding dust.
    if values.windows(2).all(|w| w[0] == w[1]) {
        return Moments { mean: values[0], var: 0.0, skewness: 0.0, excess_kurtosis: 0.0 };
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0f64, 0.0f64, 0.0f64);
    for &v in values {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    let var = if n > 1 { m2 * nf / (nf - 1.0) } else { 0.0 };
    let (skewness, excess_kurtosis) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    Moments { mean, var, skewness, excess_kurtosis }
}

/// One-sample Kolmogorov-Smirnov statistic of `values` against a continuous
/// CDF: `sup |F_n - F|`, evaluated at both sides of every data point.
pub fn ks_statistic(values: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs());
    }
    d
}

/// KS distance to the zero-mean normal with the given variance. A vanishing
/// variance degenerates to the unit step at 0, handled with its left limits
/// so identical samples score near 1 rather than tripping a division.
fn ks_against_centered_normal(values: &[f64], variance: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    if variance > 0.0 {
        let normal = Normal::new(0.0, variance.sqrt()).expect("positive variance");
        return ks_statistic(values, |x| normal.cdf(x));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in v.iter().enumerate() {
        let right = if x >= 0.0 { 1.0 } else { 0.0 };
        let left = if x > 0.0 { 1.0 } else { 0.0 };
        d = d.max((right - (i + 1) as f64 / n).abs()).max((left - i as f64 / n).abs());
    }
    d
}

fn run_one(
    cfg: &EnsembleConfig,
    tf: &TestFunction,
    walk: &WalkConfig,
    t_max: Option<f64>,
    kernels: Option<&KernelSet>,
    run: u32,
) -> Result<(f64, Option<f64>, Option<f64>), String> {
    let nf = f64::from(cfg.n);
    let stream = u64::from(run);
    match cfg.statistic {
        Statistic::Discrepancy => {
            let t = (cfg.y0 * nf * nf).floor() as u64;
            let trace = grow_cylinder_with(cfg.n, t, cfg.seed, stream, walk, kernels)
                .map_err(|e| e.to_string())?;
            let v = discrepancy_pairing(&trace, tf, cfg.y0).map_err(|e| e.to_string())?;
            Ok((v, None, None))
        }
        Statistic::Lateness => {
            let horizon = t_max.expect("lateness always resolves t_max");
            let trace = grow_cylinder_poisson_with(cfg.n, horizon, cfg.seed, stream, walk, kernels)
                .map_err(|e| e.to_string())?;
            let v = lateness_pairing(&trace, tf).map_err(|e| e.to_string())?;
            Ok((v, None, None))
        }
        Statistic::Martingale => {
            let t = (cfg.y0 * nf * nf).floor() as u64;
            let trace = grow_cylinder_with(cfg.n, t, cfg.seed, stream, walk, kernels)
                .map_err(|e| e.to_string())?;
            let rec = track_martingale(&trace, tf, cfg.y0).map_err(|e| e.to_string())?;
            Ok((rec.final_value(), Some(rec.realized_qv), Some(rec.fourth_moment_sum)))
        }
    }
}

/// Run an ensemble of independent growths and summarize the collected
/// statistic against its limit law.
///
/// Run `i` uses stream id `i` under the master seed, so the ensemble is a
/// pure function of its config. Individual run failures are tolerated up to
/// 1% of the ensemble and listed in the summary; beyond that the whole
/// ensemble errors. The KS statistic is taken against the zero-mean normal
/// with the statistic's theoretical variance (circle formula for
/// discrepancy and martingale, Green's-kernel quadratic form for lateness).
pub fn run_ensemble(cfg: &EnsembleConfig) -> Result<Ensemble, StatsError> {
    if cfg.runs < 2 {
        return Err(StatsError::TooFewRuns(cfg.runs));
    }
    let tf = TestFunction::from_spec(cfg.tf.clone())?;
    let nf = f64::from(cfg.n);
    let walk = cfg.walk.unwrap_or_else(|| WalkConfig::for_circumference(cfg.n));
    let t_max = match cfg.statistic {
        Statistic::Lateness => Some(cfg.t_max.unwrap_or(1.6 * tf.c2 * nf * nf)),
        _ => None,
    };
    let theoretical_var = match cfg.statistic {
        Statistic::Lateness => theoretical_variance_gff(&tf)?,
        _ => theoretical_variance_circle(&tf, cfg.y0)?,
    };
    let kernels = if walk.accelerated { Some(Arc::new(KernelSet::new(cfg.n)?)) } else { None };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.unwrap_or(0))
        .build()
        .map_err(|e| StatsError::Concurrency(e.to_string()))?;
    let outcomes: Vec<RunOutcome> = pool.install(|| {
        (0..cfg.runs)
            .into_par_iter()
            .map(|run| {
                match run_one(cfg, &tf, &walk, t_max, kernels.as_deref(), run) {
                    Ok((v, qv, m4)) => RunOutcome {
                        run,
                        value: Some(v),
                        realized_qv: qv,
                        fourth_moment_sum: m4,
                        error: None,
                    },
                    Err(e) => RunOutcome {
                        run,
                        value: None,
                        realized_qv: None,
                        fourth_moment_sum: None,
                        error: Some(e),
                    },
                }
            })
            .collect()
    });

    let errors: Vec<String> = outcomes
        .iter()
        .filter_map(|o| o.error.as_ref().map(|e| format!("run {}: {e}", o.run)))
        .collect();
    if errors.len() * 100 > cfg.runs as usize {
        return Err(StatsError::ErrorBudgetExceeded {
            failed: errors.len(),
            runs: cfg.runs,
            first: errors[0].clone(),
        });
    }
    let values: Vec<f64> = outcomes.iter().filter_map(|o| o.value).collect();
    let m = sample_moments(&values);
    let summary = EnsembleSummary {
        runs: cfg.runs,
        sample_mean: m.mean,
        sample_var: m.var,
        skewness: m.skewness,
        excess_kurtosis: m.excess_kurtosis,
        ks_stat: ks_against_centered_normal(&values, theoretical_var),
        ks_critical_1pct: ks_critical_1pct(values.len()),
        theoretical_var,
        var_ratio: if theoretical_var > 0.0 { m.var / theoretical_var } else { f64::NAN },
        seed: cfg.seed,
        config_echo: EnsembleConfig { t_max, walk: Some(walk), ..cfg.clone() },
        errors,
    };
    Ok(Ensemble { summary, values, outcomes })
}

/// One row of a frontier-scaling table: band-width statistics of `runs`
/// independent growths at `T = N^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: u32,
    pub runs: u32,
    pub mean_inner: f64,
    pub mean_outer: f64,
    /// Nearest-rank 95th percentiles.
    pub p95_inner: u32,
    pub p95_outer: u32,
    pub p95_total: u32,
    /// The p95 widths divided by ln N (0 when the width itself is 0).
    pub inner_ratio: f64,
    pub outer_ratio: f64,
    pub total_ratio: f64,
    /// Runs whose total width exceeded `exceed_constant * ln N`.
    pub exceed_count: u32,
}

fn nearest_rank_p95(sorted: &[u32]) -> u32 {
    let idx = ((0.95 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[idx - 1]
}

fn width_ratio(width: u32, ln_n: f64) -> f64 {
    if width == 0 {
        0.0
    } else {
        f64::from(width) / ln_n
    }
}

/// Grow `runs` clusters to `T = N^2` for every `N` in `n_list` and tabulate
/// the frontier band widths; the interesting output is the p95 width per
/// ln N, which the logarithmic-fluctuation bound keeps in a common band
/// across sizes. Stream ids are unique across the whole table.
pub fn scaling_study(
    n_list: &[u32],
    runs: u32,
    seed: u64,
    exceed_constant: f64,
) -> Result<Vec<ScalingRow>, StatsError> {
    let mut rows = Vec::with_capacity(n_list.len());
    for (ni, &n) in n_list.iter().enumerate() {
        if n == 0 {
            return Err(StatsError::Growth(GrowthError::ZeroCircumference));
        }
        let walk = WalkConfig::for_circumference(n);
        let kernels = Arc::new(KernelSet::new(n)?);
        let t = u64::from(n) * u64::from(n);
        let widths: Vec<Result<(u32, u32), GrowthError>> = (0..runs)
            .into_par_iter()
            .map(|run| {
                let stream = ni as u64 * u64::from(runs) + u64::from(run);
                grow_cylinder_with(n, t, seed, stream, &walk, Some(&kernels))
                    .map(|trace| band_width(&trace))
            })
            .collect();
        let mut inner = Vec::with_capacity(widths.len());
        let mut outer = Vec::with_capacity(widths.len());
        let mut total = Vec::with_capacity(widths.len());
        for w in widths {
            let (i, o) = w?;
            inner.push(i);
            outer.push(o);
            total.push(i + o);
        }
        let ln_n = f64::from(n).ln();
        let exceed_count =
            total.iter().filter(|&&w| f64::from(w) > exceed_constant * ln_n).count() as u32;
        let mean =
            |v: &[u32]| v.iter().map(|&x| f64::from(x)).sum::<f64>() / v.len().max(1) as f64;
        let (mean_inner, mean_outer) = (mean(&inner), mean(&outer));
        inner.sort_unstable();
        outer.sort_unstable();
        total.sort_unstable();
        let (p95_inner, p95_outer, p95_total) =
            (nearest_rank_p95(&inner), nearest_rank_p95(&outer), nearest_rank_p95(&total));
        rows.push(ScalingRow {
            n,
            runs,
            mean_inner,
            mean_outer,
            p95_inner,
            p95_outer,
            p95_total,
            inner_ratio: width_ratio(p95_inner, ln_n),
            outer_ratio: width_ratio(p95_outer, ln_n),
            total_ratio: width_ratio(p95_total, ln_n),
            exceed_count,
        });
    }
    Ok(rows)
}

/// Ensemble diagnostics for the martingale CLT's normal-approximation bound:
/// the error is controlled by `((A + B) / S^4)^{1/5}` with `A` the expected
/// fourth-moment sum, `S^2` the expected quadratic variation and `B` its
/// variance. Reported as-is; no pass/fail, since the bound's constant is
/// unknown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeydeBrownReport {
    pub records: usize,
    /// Mean of the per-path fourth-moment sums (A-hat).
    pub fourth_moment_mean: f64,
    /// Mean realized quadratic variation (S^2-hat).
    pub qv_mean: f64,
    /// Population variance of the realized quadratic variation (B-hat).
    pub qv_variance: f64,
    /// `((A + B) / S^4)^{1/5}`; infinite or NaN when S^2-hat = 0.
    pub ratio: f64,
    /// Set when S^2-hat = 0, making the ratio a division by zero.
    pub degenerate: bool,
    pub theoretical_var: f64,
}

/// Diagnostics from raw per-run `(realized_qv, fourth_moment_sum)` pairs.
pub fn heyde_brown_from_moments(moments: &[(f64, f64)], theoretical_var: f64) -> HeydeBrownReport {
    let n = moments.len().max(1) as f64;
    let qv_mean = moments.iter().map(|m| m.0).sum::<f64>() / n;
    let fourth_moment_mean = moments.iter().map(|m| m.1).sum::<f64>() / n;
    let qv_variance = moments.iter().map(|m| (m.0 - qv_mean).powi(2)).sum::<f64>() / n;
    let degenerate = qv_mean == 0.0;
    let ratio = ((fourth_moment_mean + qv_variance) / qv_mean.powi(2)).powf(0.2);
    HeydeBrownReport {
        records: moments.len(),
        fourth_moment_mean,
        qv_mean,
        qv_variance,
        ratio,
        degenerate,
        theoretical_var,
    }
}

pub fn heyde_brown_diagnostics(
    records: &[MartingaleRecord],
    theoretical_var: f64,
) -> HeydeBrownReport {
    let moments: Vec<(f64, f64)> =
        records.iter().map(|r| (r.realized_qv, r.fourth_moment_sum)).collect();
    heyde_brown_from_moments(&moments, theoretical_var)
}
