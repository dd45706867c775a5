//! `idla`: command-line front end for the cylinder aggregation toolkit.
//!
//! One subcommand per library operation, deterministic text outputs (CSV,
//! JSON, PGM/PPM), and an optional JSON run manifest recording the command
//! line, master seed, RNG algorithm, module versions, and a SHA-256 hash of
//! every file written, so any run can be audited for bit-exact reproduction.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime cap exceeded
//! (walk step cap, stabilization pass budget, ensemble error budget),
//! 3 built-in `--check` failed.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use idla_core::{
    classify_symmetric_difference, cluster_csv, estimate_harmonic_measure, fmt_float, grid_csv,
    grid_pgm, grow_cylinder, grow_cylinder_poisson, grow_directed_propp, harmonic_measure_csv,
    scaling_csv, scaling_study, smash_sum, smash_sum_stochastic, stabilize,
    symmetric_difference_csv, symmetric_difference_ppm, verify_odometer_identity, EnsembleConfig,
    FloorMode, Grid2, GrowthError, GrowthTrace, SandpileError, SandpileGrid, Schedule, Shape,
    StabilizeParams, Statistic, StatsError, TestFunction, TestFunctionSpec, WalkConfig,
    RNG_ALGORITHM,
};

/// Built-in defaults for every subcommand. `--config <path>` merges a
/// (possibly partial) JSON file over this document; flags override both.
const DEFAULTS_JSON: &str = include_str!("../defaults.json");

pub fn run() -> i32 {
    run_from(std::env::args_os())
}

/// Parse `args` (including the binary name) and execute. Returns the process
/// exit code instead of exiting, so tests can drive the CLI in-process.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let display: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests land here too; only real parse
            // errors are configuration failures.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli, display) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            classify_error(&err)
        }
    }
}

/// Map an execution error to the exit-code contract: budget exhaustion is 2,
/// anything else that survives to the top is a configuration error.
fn classify_error(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(g) = cause.downcast_ref::<GrowthError>() {
            if matches!(g, GrowthError::StepCapExceeded { .. }) {
                return 2;
            }
        }
        if let Some(s) = cause.downcast_ref::<SandpileError>() {
            if matches!(s, SandpileError::NonConvergence { .. }) {
                return 2;
            }
        }
        if let Some(s) = cause.downcast_ref::<StatsError>() {
            if matches!(s, StatsError::ErrorBudgetExceeded { .. }) {
                return 2;
            }
        }
    }
    1
}

#[derive(Debug, Parser)]
#[command(
    name = "idla",
    version,
    about = "Internal DLA on the cylinder, divisible sandpiles, and their fluctuation statistics"
)]
struct Cli {
    /// Master seed. Required by every stochastic command; runs with the same
    /// seed and arguments produce byte-identical outputs.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output path, or output prefix for multi-file commands
    /// (sandpile, smash, symdiff).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Write a JSON run manifest (command line, seed, RNG, versions, output
    /// hashes) to this path.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    /// Worker threads for ensemble fan-out. Never affects output values.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// JSON config file merged over the built-in defaults (partial files
    /// are fine; unknown keys are rejected).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run the command's built-in statistical check and exit 3 on failure.
    /// Available for ensemble, scaling, and sandpile.
    #[arg(long, global = true)]
    check: bool,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Grow one cluster and write its arrival-ordered site list as CSV.
    Grow {
        /// Cylinder circumference.
        #[arg(long)]
        n: Option<u32>,
        /// Particle count for the discrete clock. Defaults to n^2.
        #[arg(long)]
        t: Option<u64>,
        /// Attach a unit-rate Poisson clock and grow until --t-max.
        #[arg(long)]
        poisson: bool,
        /// Poisson horizon (requires --poisson).
        #[arg(long)]
        t_max: Option<f64>,
        /// Vertical boundary: "reflecting" or "exact".
        #[arg(long)]
        floor: Option<String>,
        /// Reflecting floor depth below the base; defaults to 8n.
        #[arg(long)]
        depth: Option<i64>,
        /// Law-preserving walk shortcuts on or off.
        #[arg(long)]
        accelerated: Option<bool>,
        /// Cap on walk operations per particle; exceeding it exits 2.
        #[arg(long)]
        step_cap: Option<u64>,
        /// RNG stream id (subsample of the seed's family of runs).
        #[arg(long)]
        stream: Option<u64>,
    },

    /// Run the directed rotor aggregation model and write its sites as CSV.
    Propp {
        /// Number of particles.
        #[arg(long)]
        t: Option<u64>,
    },

    /// Run a seeded ensemble and write the statistics summary as JSON.
    Ensemble {
        /// Cylinder circumference.
        #[arg(long)]
        n: Option<u32>,
        /// Collected statistic: "discrepancy", "lateness", or "martingale".
        #[arg(long)]
        statistic: Option<String>,
        /// Number of runs.
        #[arg(long)]
        runs: Option<u32>,
        /// Test function: inline JSON or a path to a JSON file.
        #[arg(long)]
        testfn: Option<String>,
        /// Height parameter; discrete runs use T = floor(y0 n^2). Defaults
        /// to the test function's y0.
        #[arg(long)]
        y0: Option<f64>,
        /// Poisson horizon for the lateness statistic.
        #[arg(long)]
        t_max: Option<f64>,
    },

    /// Grow 100-run batches over several circumferences and write the
    /// fluctuation-band scaling table as CSV.
    Scaling {
        /// Circumferences, comma separated.
        #[arg(long, value_delimiter = ',')]
        n_list: Option<Vec<u32>>,
        /// Runs per circumference.
        #[arg(long)]
        runs: Option<u32>,
    },

    /// Grow one Poisson-clock cluster and write per-site lateness as CSV.
    Lateness {
        /// Cylinder circumference.
        #[arg(long)]
        n: Option<u32>,
        /// Poisson horizon; defaults to 1.2 n^2.
        #[arg(long)]
        t_max: Option<f64>,
    },

    /// Stabilize a divisible sandpile and write mass, odometer, and domain.
    Sandpile {
        /// Initial mass: a dense CSV grid path, or "delta:<mass>:<size>" for
        /// a point mass at the center of a size x size grid.
        #[arg(long)]
        mu: Option<String>,
        /// Convergence tolerance on the maximum interior excess.
        #[arg(long)]
        tol: Option<f64>,
        /// Toppling schedule: "sweep", "random", or "queue".
        #[arg(long)]
        schedule: Option<String>,
        /// Pass budget; exceeding it exits 2.
        #[arg(long)]
        max_passes: Option<u64>,
    },

    /// Smash two disks together and write the resulting domain.
    Smash {
        /// Exactly two disks, as inline JSON or a path to a JSON file:
        /// [{"type":"disk","cx":0,"cy":0,"r":1}, ...]
        #[arg(long)]
        shapes: Option<String>,
        /// Mesh resolution: lattice spacing is 1/n.
        #[arg(long)]
        n: Option<u32>,
        /// Occupation threshold: the domain is {nu >= 1 - tol}.
        #[arg(long)]
        tol: Option<f64>,
        /// Random-walk particle model instead of divisible mass (needs --seed).
        #[arg(long)]
        stochastic: bool,
    },

    /// Grow a cluster and write its early/late sites relative to the flat
    /// profile as CSV plus a three-color PPM image.
    Symdiff {
        /// Cylinder circumference.
        #[arg(long)]
        n: Option<u32>,
        /// Height parameter: grows T = floor(y0 n^2) particles.
        #[arg(long)]
        y0: Option<f64>,
    },

    /// Estimate the frontier's first-exit distribution on a frozen cluster
    /// and write it as CSV.
    HarmonicMeasure {
        /// Cylinder circumference.
        #[arg(long)]
        n: Option<u32>,
        /// Particles grown before freezing the cluster; defaults to n^2 / 2.
        #[arg(long)]
        t: Option<u64>,
        /// Number of sampled walks.
        #[arg(long)]
        samples: Option<u64>,
    },
}

// ---------------------------------------------------------------------------
// Configuration file

/// Defaults for every subcommand. The embedded `defaults.json` is the single
/// source of truth; `--config` merges a user file over it and flags override
/// individual values. Unknown keys anywhere are configuration errors.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct Config {
    grow: GrowCfg,
    propp: ProppCfg,
    ensemble: EnsembleCfg,
    scaling: ScalingCfg,
    lateness: LatenessCfg,
    sandpile: SandpileCfg,
    smash: SmashCfg,
    symdiff: SymdiffCfg,
    harmonic_measure: MeasureCfg,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct GrowCfg {
    n: u32,
    /// Particle count; null means n^2.
    t: Option<u64>,
    /// Poisson horizon; null means --t-max must be given with --poisson.
    t_max: Option<f64>,
    /// "reflecting" or "exact".
    floor: String,
    /// Reflecting depth; null means 8n.
    depth: Option<i64>,
    accelerated: bool,
    step_cap: u64,
    stream: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProppCfg {
    t: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnsembleCfg {
    n: u32,
    runs: u32,
    /// "discrepancy", "lateness", or "martingale".
    statistic: String,
    /// null means the test function's own y0.
    y0: Option<f64>,
    /// null lets lateness runs pick 1.6 c2 n^2.
    t_max: Option<f64>,
    testfn: TestFunctionSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScalingCfg {
    n_list: Vec<u32>,
    runs: u32,
    /// Threshold multiple of ln n for the exceedance column.
    exceed_constant: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct LatenessCfg {
    n: u32,
    /// null means 1.2 n^2.
    t_max: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SandpileCfg {
    tol: f64,
    max_passes: u64,
    schedule: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SmashCfg {
    n: u32,
    tol: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SymdiffCfg {
    n: u32,
    y0: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeasureCfg {
    n: u32,
    /// Particles before freezing; null means n^2 / 2.
    t: Option<u64>,
    samples: u64,
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    let mut base: serde_json::Value =
        serde_json::from_str(DEFAULTS_JSON).expect("embedded defaults are valid JSON");
    if let Some(p) = path {
        let text =
            fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
        let user: serde_json::Value = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", p.display()))?;
        merge_json(&mut base, user);
    }
    serde_json::from_value(base).context("validating config")
}

/// Object fields merge recursively, everything else replaces. Keys absent
/// from the defaults survive the merge and are rejected by schema validation.
fn merge_json(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

// ---------------------------------------------------------------------------
// Output collection and the run manifest

#[derive(Debug, Serialize)]
struct RunManifest {
    command_line: Vec<String>,
    master_seed: Option<u64>,
    rng_algorithm: String,
    module_versions: BTreeMap<String, String>,
    wall_time_seconds: f64,
    /// Path -> SHA-256 of the exact bytes written.
    outputs: BTreeMap<String, String>,
}

struct OutputSink {
    started: Instant,
    command_line: Vec<String>,
    master_seed: Option<u64>,
    manifest_path: Option<PathBuf>,
    outputs: BTreeMap<String, String>,
}

impl OutputSink {
    fn new(command_line: Vec<String>, master_seed: Option<u64>, manifest_path: Option<PathBuf>) -> Self {
        Self { started: Instant::now(), command_line, master_seed, manifest_path, outputs: BTreeMap::new() }
    }

    fn write(&mut self, path: &Path, contents: &str) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)
                    .with_context(|| format!("creating directory {}", dir.display()))?;
            }
        }
        fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.insert(path.display().to_string(), sha256_hex(contents.as_bytes()));
        Ok(())
    }

    fn finish(self) -> Result<()> {
        let Some(path) = self.manifest_path else { return Ok(()) };
        let manifest = RunManifest {
            command_line: self.command_line,
            master_seed: self.master_seed,
            rng_algorithm: RNG_ALGORITHM.to_string(),
            module_versions: BTreeMap::from([
                ("idla-core".to_string(), idla_core::VERSION.to_string()),
                ("idla-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ]),
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
            outputs: self.outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest).context("serializing manifest")?;
        text.push('\n');
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)
                    .with_context(|| format!("creating directory {}", dir.display()))?;
            }
        }
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        let _ = write!(s, "{b:02x}");
    }
    s
}

// ---------------------------------------------------------------------------
// Dispatch

fn execute(cli: Cli, argv: Vec<String>) -> Result<i32> {
    let cfg = load_config(cli.config.as_deref())?;
    let mut sink = OutputSink::new(argv, cli.seed, cli.manifest.clone());
    let status = match &cli.cmd {
        Cmd::Grow { n, t, poisson, t_max, floor, depth, accelerated, step_cap, stream } => {
            cmd_grow(
                &cli,
                &cfg,
                &mut sink,
                GrowArgs {
                    n: *n,
                    t: *t,
                    poisson: *poisson,
                    t_max: *t_max,
                    floor: floor.clone(),
                    depth: *depth,
                    accelerated: *accelerated,
                    step_cap: *step_cap,
                    stream: *stream,
                },
            )?
        }
        Cmd::Propp { t } => cmd_propp(&cli, &cfg, &mut sink, *t)?,
        Cmd::Ensemble { n, statistic, runs, testfn, y0, t_max } => cmd_ensemble(
            &cli,
            &cfg,
            &mut sink,
            *n,
            statistic.as_deref(),
            *runs,
            testfn.as_deref(),
            *y0,
            *t_max,
        )?,
        Cmd::Scaling { n_list, runs } => cmd_scaling(&cli, &cfg, &mut sink, n_list.clone(), *runs)?,
        Cmd::Lateness { n, t_max } => cmd_lateness(&cli, &cfg, &mut sink, *n, *t_max)?,
        Cmd::Sandpile { mu, tol, schedule, max_passes } => {
            cmd_sandpile(&cli, &cfg, &mut sink, mu.as_deref(), *tol, schedule.as_deref(), *max_passes)?
        }
        Cmd::Smash { shapes, n, tol, stochastic } => {
            cmd_smash(&cli, &cfg, &mut sink, shapes.as_deref(), *n, *tol, *stochastic)?
        }
        Cmd::Symdiff { n, y0 } => cmd_symdiff(&cli, &cfg, &mut sink, *n, *y0)?,
        Cmd::HarmonicMeasure { n, t, samples } => {
            cmd_harmonic_measure(&cli, &cfg, &mut sink, *n, *t, *samples)?
        }
    };
    sink.finish()?;
    Ok(status)
}

fn require_seed(cli: &Cli) -> Result<u64> {
    cli.seed.ok_or_else(|| anyhow!("--seed is required for stochastic commands"))
}

fn no_check(cli: &Cli, command: &str) -> Result<()> {
    if cli.check {
        bail!("{command} has no built-in --check");
    }
    Ok(())
}

fn out_path(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

/// Multi-file commands treat --out as a name prefix.
fn prefixed(cli: &Cli, default: &str, suffix: &str) -> PathBuf {
    let mut name = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(default))
        .into_os_string();
    name.push(suffix);
    PathBuf::from(name)
}

/// Accept inline JSON (starts with '{' or '[') or a path to a JSON file.
fn read_json_arg(arg: &str) -> Result<String> {
    let trimmed = arg.trim_start();
    if trimmed.starts_with('{') || trimmed.starts_with('[') {
        Ok(arg.to_string())
    } else {
        fs::read_to_string(arg).with_context(|| format!("reading {arg}"))
    }
}

fn walk_config(n: u32, floor: &str, depth: Option<i64>, accelerated: bool, step_cap: u64) -> Result<WalkConfig> {
    let floor = match floor {
        "reflecting" => FloorMode::Reflecting { depth: depth.unwrap_or(8 * i64::from(n)) },
        "exact" => FloorMode::Exact,
        other => bail!("unknown floor mode {other:?} (expected \"reflecting\" or \"exact\")"),
    };
    if floor == FloorMode::Exact && !accelerated {
        bail!("the exact floor needs acceleration: the plain walk cannot return from below the base in bounded time");
    }
    Ok(WalkConfig { floor, step_cap, accelerated })
}

// ---------------------------------------------------------------------------
// Subcommands

struct GrowArgs {
    n: Option<u32>,
    t: Option<u64>,
    poisson: bool,
    t_max: Option<f64>,
    floor: Option<String>,
    depth: Option<i64>,
    accelerated: Option<bool>,
    step_cap: Option<u64>,
    stream: Option<u64>,
}

fn cmd_grow(cli: &Cli, cfg: &Config, sink: &mut OutputSink, args: GrowArgs) -> Result<i32> {
    no_check(cli, "grow")?;
    let n = args.n.unwrap_or(cfg.grow.n);
    let floor_name = args.floor.as_deref().unwrap_or(&cfg.grow.floor);
    let walk = walk_config(
        n,
        floor_name,
        args.depth.or(cfg.grow.depth),
        args.accelerated.unwrap_or(cfg.grow.accelerated),
        args.step_cap.unwrap_or(cfg.grow.step_cap),
    )?;
    let seed = require_seed(cli)?;
    let stream = args.stream.unwrap_or(cfg.grow.stream);
    let trace = if args.poisson {
        let t_max = args
            .t_max
            .or(cfg.grow.t_max)
            .ok_or_else(|| anyhow!("--poisson needs --t-max (or a t_max config value)"))?;
        grow_cylinder_poisson(n, t_max, seed, stream, &walk)?
    } else {
        if args.t_max.is_some() {
            bail!("--t-max only applies with --poisson");
        }
        let t = args.t.or(cfg.grow.t).unwrap_or(u64::from(n) * u64::from(n));
        grow_cylinder(n, t, seed, stream, &walk)?
    };
    let path = out_path(cli, "cluster.csv");
    sink.write(&path, &cluster_csv(&trace))?;
    println!("wrote {}: n={} particles={}", path.display(), n, trace.particles());
    Ok(0)
}

fn cmd_propp(cli: &Cli, cfg: &Config, sink: &mut OutputSink, t: Option<u64>) -> Result<i32> {
    no_check(cli, "propp")?;
    let t = t.unwrap_or(cfg.propp.t);
    let seed = require_seed(cli)?;
    let cluster = grow_directed_propp(t, seed, 0);
    let mut csv = String::from("x,y,arrival_index\n");
    for (i, (x, y)) in cluster.order().iter().enumerate() {
        let _ = writeln!(csv, "{x},{y},{}", i + 1);
    }
    let path = out_path(cli, "propp.csv");
    sink.write(&path, &csv)?;
    println!("wrote {}: {} sites", path.display(), cluster.order().len());
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_ensemble(
    cli: &Cli,
    cfg: &Config,
    sink: &mut OutputSink,
    n: Option<u32>,
    statistic: Option<&str>,
    runs: Option<u32>,
    testfn: Option<&str>,
    y0: Option<f64>,
    t_max: Option<f64>,
) -> Result<i32> {
    let spec: TestFunctionSpec = match testfn {
        Some(arg) => serde_json::from_str(&read_json_arg(arg)?).context("parsing test function")?,
        None => cfg.ensemble.testfn.clone(),
    };
    // Validate the test function before any run starts.
    let tf = TestFunction::from_spec(spec.clone())?;
    let statistic = match statistic.unwrap_or(&cfg.ensemble.statistic) {
        "discrepancy" => Statistic::Discrepancy,
        "lateness" => Statistic::Lateness,
        "martingale" => Statistic::Martingale,
        other => bail!(
            "unknown statistic {other:?} (expected \"discrepancy\", \"lateness\", or \"martingale\")"
        ),
    };
    let config = EnsembleConfig {
        n: n.unwrap_or(cfg.ensemble.n),
        statistic,
        y0: y0.or(cfg.ensemble.y0).unwrap_or(tf.y0),
        t_max: t_max.or(cfg.ensemble.t_max),
        runs: runs.unwrap_or(cfg.ensemble.runs),
        seed: require_seed(cli)?,
        tf: spec,
        walk: None,
        workers: cli.workers,
    };
    let ensemble = idla_core::run_ensemble(&config)?;
    let summary = &ensemble.summary;
    let mut text = serde_json::to_string_pretty(summary).context("serializing summary")?;
    text.push('\n');
    let path = out_path(cli, "summary.json");
    sink.write(&path, &text)?;
    println!(
        "wrote {}: runs={} mean={:.6e} var={:.6e} var_ratio={:.4} ks={:.4} (1% crit {:.4})",
        path.display(),
        summary.runs,
        summary.sample_mean,
        summary.sample_var,
        summary.var_ratio,
        summary.ks_stat,
        summary.ks_critical_1pct,
    );
    if cli.check {
        let m = ensemble.values.len() as f64;
        let stderr = (summary.sample_var / m).sqrt();
        let mean_ok = summary.sample_mean.abs() <= 3.0 * stderr;
        let ks_ok = summary.ks_stat < summary.ks_critical_1pct;
        if !(mean_ok && ks_ok) {
            println!(
                "check FAILED: |mean| <= 3 stderr: {mean_ok}, KS below 1% critical: {ks_ok}"
            );
            return Ok(3);
        }
        println!("check passed: mean within 3 stderr, KS below the 1% critical value");
    }
    Ok(0)
}

fn cmd_scaling(
    cli: &Cli,
    cfg: &Config,
    sink: &mut OutputSink,
    n_list: Option<Vec<u32>>,
    runs: Option<u32>,
) -> Result<i32> {
    let n_list = n_list.unwrap_or_else(|| cfg.scaling.n_list.clone());
    if n_list.is_empty() {
        bail!("--n-list must name at least one circumference");
    }
    let runs = runs.unwrap_or(cfg.scaling.runs);
    let seed = require_seed(cli)?;
    let exceed = cfg.scaling.exceed_constant;
    let rows = scaling_study(&n_list, runs, seed, exceed)?;
    let path = out_path(cli, "scaling.csv");
    sink.write(&path, &scaling_csv(&rows))?;
    for row in &rows {
        println!(
            "n={} p95 band width {} = {:.3} ln n (exceedances past {} ln n: {})",
            row.n, row.p95_total, row.total_ratio, exceed, row.exceed_count
        );
    }
    println!("wrote {}", path.display());
    if cli.check {
        // The p95 band widths should scale like ln n: all ratios inside a
        // single [c, 3c] interval.
        let min = rows.iter().map(|r| r.total_ratio).fold(f64::INFINITY, f64::min);
        let max = rows.iter().map(|r| r.total_ratio).fold(0.0, f64::max);
        if !(min > 0.0 && max <= 3.0 * min) {
            println!("check FAILED: ratios span [{min:.3}, {max:.3}], wider than [c, 3c]");
            return Ok(3);
        }
        println!("check passed: ratios span [{min:.3}, {max:.3}] inside [c, 3c]");
    }
    Ok(0)
}

fn cmd_lateness(
    cli: &Cli,
    cfg: &Config,
    sink: &mut OutputSink,
    n: Option<u32>,
    t_max: Option<f64>,
) -> Result<i32> {
    no_check(cli, "lateness")?;
    let n = n.unwrap_or(cfg.lateness.n);
    let t_max = t_max
        .or(cfg.lateness.t_max)
        .unwrap_or_else(|| 1.2 * f64::from(n) * f64::from(n));
    let seed = require_seed(cli)?;
    let walk = WalkConfig::for_circumference(n);
    let trace = grow_cylinder_poisson(n, t_max, seed, 0, &walk)?;
    let path = out_path(cli, "lateness.csv");
    sink.write(&path, &lateness_csv(&trace))?;
    println!("wrote {}: n={} arrivals={}", path.display(), n, trace.particles());
    Ok(0)
}

/// Per-site lateness: arrival time over n, minus the cell-center height at
/// which the flat profile schedules that site.
fn lateness_csv(trace: &GrowthTrace) -> String {
    let times = trace.times().expect("poisson traces carry arrival times");
    let n = f64::from(trace.cluster().n());
    let mut csv = String::from("n1,n2,arrival_time,lateness\n");
    for (site, &time) in trace.arrivals().iter().zip(times) {
        let lateness = time / n - (site.n2 as f64 - 0.5);
        let _ = writeln!(csv, "{},{},{},{}", site.n1, site.n2, fmt_float(time), fmt_float(lateness));
    }
    csv
}

fn cmd_sandpile(
    cli: &Cli,
    cfg: &Config,
    sink: &mut OutputSink,
    mu: Option<&str>,
    tol: Option<f64>,
    schedule: Option<&str>,
    max_passes: Option<u64>,
) -> Result<i32> {
    let mu = mu.ok_or_else(|| anyhow!("--mu is required (a CSV path or delta:<mass>:<size>)"))?;
    let schedule = match schedule.unwrap_or(&cfg.sandpile.schedule) {
        "sweep" => Schedule::Sweep,
        "queue" => Schedule::Queue,
        "random" => Schedule::Random { seed: require_seed(cli)? },
        other => bail!("unknown schedule {other:?} (expected \"sweep\", \"random\", or \"queue\")"),
    };
    let params = StabilizeParams {
        tol: tol.unwrap_or(cfg.sandpile.tol),
        max_passes: max_passes.unwrap_or(cfg.sandpile.max_passes),
        schedule,
        ..StabilizeParams::default()
    };
    let mut pile = load_mu(mu)?;
    let report = stabilize(&mut pile, &params)?;
    let domain = occupancy_grid(&pile, params.tol);
    sink.write(&prefixed(cli, "sandpile", "_nu.csv"), &grid_csv(pile.nu()))?;
    sink.write(&prefixed(cli, "sandpile", "_odometer.csv"), &grid_csv(pile.odometer()))?;
    sink.write(&prefixed(cli, "sandpile", "_domain.pgm"), &grid_pgm(&domain))?;
    println!(
        "stabilized in {} passes ({} topples), final excess {:.3e}{}",
        report.passes,
        report.topples,
        report.final_excess,
        if report.frame_touched { ", mass reached the frame" } else { "" },
    );
    println!("wrote {}_nu.csv, _odometer.csv, _domain.pgm", prefixed(cli, "sandpile", "").display());
    if cli.check {
        let report = verify_odometer_identity(pile.mu(), 1e-5)?;
        if !report.pass {
            println!(
                "check FAILED: odometer vs obstacle-problem solution differ by {:.3e} (tol {:.1e})",
                report.sup_difference, report.tol
            );
            return Ok(3);
        }
        println!(
            "check passed: odometer matches the obstacle-problem solution to {:.3e}",
            report.sup_difference
        );
    }
    Ok(0)
}

fn load_mu(spec: &str) -> Result<SandpileGrid> {
    if let Some(rest) = spec.strip_prefix("delta:") {
        let (mass, size) = rest
            .split_once(':')
            .ok_or_else(|| anyhow!("point mass spec is delta:<mass>:<size>, got {spec:?}"))?;
        let mass: f64 = mass.parse().with_context(|| format!("parsing mass {mass:?}"))?;
        let size: usize = size.parse().with_context(|| format!("parsing grid size {size:?}"))?;
        Ok(SandpileGrid::point_mass(mass, size)?)
    } else {
        let text = fs::read_to_string(spec).with_context(|| format!("reading {spec}"))?;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .with_context(|| format!("{spec}:{}: bad number", i + 1))?;
            rows.push(row);
        }
        Ok(SandpileGrid::new(Grid2::from_rows(rows)?)?)
    }
}

/// Binary occupation grid {nu >= 1 - tol} for PGM rendering.
fn occupancy_grid(pile: &SandpileGrid, tol: f64) -> Grid2 {
    let nu = pile.nu();
    Grid2::from_fn(nu.width(), nu.height(), |x, y| {
        if nu.get(x, y) >= 1.0 - tol {
            1.0
        } else {
            0.0
        }
    })
}

fn cmd_smash(
    cli: &Cli,
    cfg: &Config,
    sink: &mut OutputSink,
    shapes: Option<&str>,
    n: Option<u32>,
    tol: Option<f64>,
    stochastic: bool,
) -> Result<i32> {
    no_check(cli, "smash")?;
    let shapes = shapes.ok_or_else(|| anyhow!("--shapes is required (inline JSON or a path)"))?;
    let shapes: Vec<Shape> =
        serde_json::from_str(&read_json_arg(shapes)?).context("parsing shapes")?;
    let [a, b]: [Shape; 2] = shapes
        .try_into()
        .map_err(|v: Vec<Shape>| anyhow!("expected exactly two shapes, got {}", v.len()))?;
    let n = n.unwrap_or(cfg.smash.n);
    let tol = tol.unwrap_or(cfg.smash.tol);
    if stochastic {
        let seed = require_seed(cli)?;
        let smash = smash_sum_stochastic(a, b, n, seed)?;
        let mut occupancy = Grid2::new(smash.width(), smash.height());
        let mut csv = String::from("x,y,wx,wy\n");
        for &(x, y) in &smash.domain {
            occupancy.set(x, y, 1.0);
            let (wx, wy) = smash.raster.world(x, y);
            let _ = writeln!(csv, "{x},{y},{},{}", fmt_float(wx), fmt_float(wy));
        }
        sink.write(&prefixed(cli, "smash", "_domain.pgm"), &grid_pgm(&occupancy))?;
        sink.write(&prefixed(cli, "smash", "_domain.csv"), &csv)?;
        println!(
            "particle smash: {} walkers, {} occupied sites{}",
            smash.walkers,
            smash.domain.len(),
            if smash.frame_deaths > 0 { " (some walkers left the grid)" } else { "" },
        );
    } else {
        let smash = smash_sum(a, b, n, tol)?;
        let mut csv = String::from("x,y,wx,wy\n");
        for &(x, y) in &smash.domain {
            let (wx, wy) = smash.raster.world(x, y);
            let _ = writeln!(csv, "{x},{y},{},{}", fmt_float(wx), fmt_float(wy));
        }
        let domain = occupancy_grid(&smash.grid, tol);
        sink.write(&prefixed(cli, "smash", "_nu.csv"), &grid_csv(smash.grid.nu()))?;
        sink.write(&prefixed(cli, "smash", "_odometer.csv"), &grid_csv(smash.grid.odometer()))?;
        sink.write(&prefixed(cli, "smash", "_domain.pgm"), &grid_pgm(&domain))?;
        sink.write(&prefixed(cli, "smash", "_domain.csv"), &csv)?;
        println!(
            "smash sum: {} occupied sites in {} passes, total mass {}",
            smash.domain.len(),
            smash.report.passes,
            fmt_float(smash.grid.nu().total()),
        );
    }
    println!("wrote {}_*", prefixed(cli, "smash", "").display());
    Ok(0)
}

fn cmd_symdiff(
    cli: &Cli,
    cfg: &Config,
    sink: &mut OutputSink,
    n: Option<u32>,
    y0: Option<f64>,
) -> Result<i32> {
    no_check(cli, "symdiff")?;
    let n = n.unwrap_or(cfg.symdiff.n);
    let y0 = y0.unwrap_or(cfg.symdiff.y0);
    if !(y0 > 0.0 && y0.is_finite()) {
        bail!("y0 must be positive and finite, got {y0}");
    }
    let seed = require_seed(cli)?;
    let t = (y0 * f64::from(n) * f64::from(n)).floor() as u64;
    let walk = WalkConfig::for_circumference(n);
    let trace = grow_cylinder(n, t, seed, 0, &walk)?;
    let sd = classify_symmetric_difference(&trace, y0)?;
    sink.write(&prefixed(cli, "symdiff", ".csv"), &symmetric_difference_csv(&sd))?;
    sink.write(&prefixed(cli, "symdiff", ".ppm"), &symmetric_difference_ppm(&trace, &sd))?;
    println!(
        "n={n} T={t}: {} early, {} late, {} on time; wrote {}.csv and .ppm",
        sd.early.len(),
        sd.late.len(),
        sd.on_time_occupied,
        prefixed(cli, "symdiff", "").display(),
    );
    Ok(0)
}

fn cmd_harmonic_measure(
    cli: &Cli,
    cfg: &Config,
    sink: &mut OutputSink,
    n: Option<u32>,
    t: Option<u64>,
    samples: Option<u64>,
) -> Result<i32> {
    no_check(cli, "harmonic-measure")?;
    let n = n.unwrap_or(cfg.harmonic_measure.n);
    let t = t
        .or(cfg.harmonic_measure.t)
        .unwrap_or_else(|| u64::from(n) * u64::from(n) / 2);
    let samples = samples.unwrap_or(cfg.harmonic_measure.samples);
    let seed = require_seed(cli)?;
    let walk = WalkConfig::for_circumference(n);
    // Stream 0 grows the frozen cluster, stream 1 samples it; the two stay
    // decoupled however many samples are drawn.
    let trace = grow_cylinder(n, t, seed, 0, &walk)?;
    let measure = estimate_harmonic_measure(trace.cluster(), samples, seed, 1, &walk)?;
    let path = out_path(cli, "harmonic_measure.csv");
    sink.write(&path, &harmonic_measure_csv(&measure))?;
    println!(
        "wrote {}: {} frontier sites from {} walks",
        path.display(),
        measure.len(),
        samples
    );
    Ok(0)
}
