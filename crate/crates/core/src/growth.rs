//! Cluster growth processes: discrete-time and Poisson-clock cylinder
//! aggregation, the planar single-source process, the directed first-quadrant
//! walk, plus the frontier monitors and the empirical harmonic measure.
//!
//! Walks may take analytic shortcuts through regions where the outcome's law
//! is known in closed form (see [`KernelSet`]). Shortcuts change nothing
//! observable: the settled-site law is exactly that of the plain walk, which
//! stays available as the reference implementation (`accelerated: false`).

use std::collections::HashSet;
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harmonic::solve_q;
use crate::lattice::{wrap_col, CylinderCluster, RowGrid, Site};
use crate::rng::{StreamRng, CH_CLOCK, CH_WALK};

/// Smallest half-width worth an analytic slab crossing; below this plain
/// steps are cheaper than a CDF lookup.
const MIN_SLAB: i64 = 4;
/// Slab half-widths are 4 << level; 48 levels cover any reachable height.
const SLAB_LEVELS: usize = 48;

pub const DEFAULT_STEP_CAP: u64 = 10_000_000_000;

#[derive(Debug, Error)]
pub enum GrowthError {
    #[error(
        "walk for particle {particle} exceeded the step cap {cap} \
         (seed {seed}, stream {stream})"
    )]
    StepCapExceeded { seed: u64, stream: u64, particle: u64, cap: u64 },
    #[error("reflecting floor depth must be >= 1, got {0}")]
    BadFloorDepth(i64),
    #[error("circumference must be positive")]
    ZeroCircumference,
    #[error("particle count {0} exceeds the arrival-index range")]
    TooManyParticles(u64),
    #[error("negative clock horizon {0}")]
    NegativeHorizon(f64),
    #[error("recorded trace invalid: {0}")]
    BadTrace(String),
}

/// Vertical boundary condition for cylinder walks.
///
/// The walk's vertical component is recurrent, and excursions below the base
/// have infinite expected length, so the plain process needs a reflecting
/// floor to have bounded runtime. `Exact` removes the floor entirely; it is
/// only practical together with the analytic kernels, which resolve every
/// below-base excursion in closed form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FloorMode {
    Reflecting { depth: i64 },
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub floor: FloorMode,
    /// Cap on elementary walk operations (steps and analytic jumps) per
    /// particle; exceeding it is an error, never a silent truncation.
    pub step_cap: u64,
    /// Allow law-preserving analytic shortcuts. The plain walk remains the
    /// reference; this only trades CPU time, never distribution.
    pub accelerated: bool,
}

impl WalkConfig {
    /// Default configuration for circumference `n`: reflecting floor at
    /// depth 8N, default step cap, shortcuts on.
    pub fn for_circumference(n: u32) -> Self {
        Self {
            floor: FloorMode::Reflecting { depth: 8 * i64::from(n) },
            step_cap: DEFAULT_STEP_CAP,
            accelerated: true,
        }
    }

    /// No floor at all; below-base excursions are resolved analytically.
    pub fn exact() -> Self {
        Self { floor: FloorMode::Exact, step_cap: DEFAULT_STEP_CAP, accelerated: true }
    }

    fn validate(&self) -> Result<(), GrowthError> {
        if let FloorMode::Reflecting { depth } = self.floor {
            if depth < 1 {
                return Err(GrowthError::BadFloorDepth(depth));
            }
        }
        Ok(())
    }
}

/// Precomputed first-exit distributions for walk shortcuts on one cylinder.
///
/// Both kernels follow from the dispersion relation by optional stopping of
/// the product martingales `e^{2 pi i k n1 / N} e^{-(q_k/N) n2}`:
///
/// * re-entry: starting at depth j below the base, the first visit to row 0
///   lands `d` columns away with characteristic function `e^{-j q_k / N}`;
/// * slab crossing: from the centre row of a fully occupied slab of
///   half-width `a`, the walk exits at the top or bottom row with equal
///   probability, displaced by `d` with characteristic function
///   `sech(a q_k / N)` independent of the side.
///
/// Distributions are tabulated as CDFs over `d = 0..N-1` and sampled by
/// binary search. Slab levels are built lazily per half-width 4 << level, so
/// a set can be shared (it is `Sync`) across ensemble workers.
pub struct KernelSet {
    n: u32,
    x: Vec<f64>, // q_k / N for k = 0..N-1
    reentry: [OnceLock<Vec<f64>>; 4],
    slabs: Vec<OnceLock<Vec<f64>>>,
}

impl std::fmt::Debug for KernelSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KernelSet").field("n", &self.n).finish()
    }
}

fn displacement_cdf(x: &[f64], damp: impl Fn(f64) -> f64) -> Vec<f64> {
    let n = x.len();
    let c: Vec<f64> = x.iter().map(|&xi| damp(xi)).collect();
    let mut cum = Vec::with_capacity(n);
    let mut acc = 0.0;
    for d in 0..n {
        let mut p = 0.0;
        for (k, ck) in c.iter().enumerate() {
            p += ck * (2.0 * std::f64::consts::PI * (k as f64) * (d as f64) / (n as f64)).cos();
        }
        // Exact values are probabilities; clamp the round-off negatives.
        acc += (p / n as f64).max(0.0);
        cum.push(acc);
    }
    for v in &mut cum {
        *v /= acc;
    }
    cum
}

fn sample_cdf(cdf: &[f64], rng: &mut StreamRng) -> i64 {
    let u: f64 = rng.gen();
    cdf.partition_point(|&c| c < u).min(cdf.len() - 1) as i64
}

impl KernelSet {
    pub fn new(n: u32) -> Result<Self, GrowthError> {
        if n == 0 {
            return Err(GrowthError::ZeroCircumference);
        }
        let x = (0..i64::from(n))
            .map(|k| solve_q(k, n).expect("n > 0") / f64::from(n))
            .collect();
        Ok(Self {
            n,
            x,
            reentry: [OnceLock::new(), OnceLock::new(), OnceLock::new(), OnceLock::new()],
            slabs: (0..SLAB_LEVELS).map(|_| OnceLock::new()).collect(),
        })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    fn reentry_cdf(&self, depth: i64) -> &[f64] {
        debug_assert!((1..=MIN_SLAB).contains(&depth));
        self.reentry[(depth - 1) as usize]
            .get_or_init(|| displacement_cdf(&self.x, |xi| (-(depth as f64) * xi).exp()))
    }

    fn slab_cdf(&self, level: usize) -> &[f64] {
        self.slabs[level].get_or_init(|| {
            let a = (MIN_SLAB << level) as f64;
            displacement_cdf(&self.x, |xi| {
                // sech(a xi), computed overflow-free for large arguments
                let e = (-a * xi).exp();
                2.0 * e / (1.0 + e * e)
            })
        })
    }

    /// First visit to row 0 from `depth` rows below it.
    fn reentry_jump(&self, pos: Site, depth: i64, rng: &mut StreamRng) -> Site {
        let d = sample_cdf(self.reentry_cdf(depth), rng);
        Site::new(wrap_col(self.n, pos.n1 + d), 0)
    }

    /// First exit through the top or bottom row of the slab
    /// `[pos.n2 - a, pos.n2 + a]`, `a = 4 << level`.
    fn slab_jump(&self, pos: Site, level: usize, rng: &mut StreamRng) -> Site {
        let a = MIN_SLAB << level;
        let d = sample_cdf(self.slab_cdf(level), rng);
        let up = rng.gen::<bool>();
        Site::new(wrap_col(self.n, pos.n1 + d), pos.n2 + if up { a } else { -a })
    }
}

/// Largest usable slab level at `pos`, if any: the slab must lie inside the
/// fully occupied bulk and, with a reflecting floor, above it.
#[inline]
fn slab_level(cluster: &CylinderCluster, pos: Site, floor: FloorMode) -> Option<usize> {
    let headroom = cluster.solid_height() - pos.n2;
    let a_max = match floor {
        FloorMode::Exact => headroom,
        FloorMode::Reflecting { depth } => headroom.min(pos.n2 + depth),
    };
    if a_max < MIN_SLAB {
        return None;
    }
    Some((63 - a_max.leading_zeros()) as usize - 2)
}

struct CapHit;

/// Walk from `pos` (a member site) until the first non-member site; returns
/// it with the number of elementary operations consumed.
fn walk_to_frontier(
    cluster: &CylinderCluster,
    mut pos: Site,
    rng: &mut StreamRng,
    cfg: &WalkConfig,
    kernels: Option<&KernelSet>,
    cap: u64,
) -> Result<(Site, u64), CapHit> {
    let n = cluster.n();
    let mut ops: u64 = 0;
    loop {
        ops += 1;
        if ops > cap {
            return Err(CapHit);
        }
        if let Some(k) = kernels {
            if pos.n2 <= -1 && cfg.floor == FloorMode::Exact && -pos.n2 <= MIN_SLAB {
                pos = k.reentry_jump(pos, -pos.n2, rng);
                continue;
            }
            if let Some(level) = slab_level(cluster, pos, cfg.floor) {
                pos = k.slab_jump(pos, level, rng);
                continue;
            }
        }
        let dir: u32 = rng.gen_range(0..4);
        let mut next = match dir {
            0 => Site::new(wrap_col(n, pos.n1 + 1), pos.n2),
            1 => Site::new(wrap_col(n, pos.n1 - 1), pos.n2),
            2 => Site::new(pos.n1, pos.n2 + 1),
            _ => Site::new(pos.n1, pos.n2 - 1),
        };
        if let FloorMode::Reflecting { depth } = cfg.floor {
            if next.n2 < -depth {
                next = pos;
            }
        }
        if !cluster.membership(next) {
            return Ok((next, ops));
        }
        pos = next;
    }
}

/// One realized growth history on the cylinder: the settled sites in arrival
/// order, their clock times in Poisson mode, and the final cluster.
#[derive(Debug, Clone)]
pub struct GrowthTrace {
    n: u32,
    seed: u64,
    stream_id: u64,
    arrivals: Vec<Site>,
    times: Option<Vec<f64>>,
    index: RowGrid<u32>,
    cluster: CylinderCluster,
    t_max: f64,
    walk_ops: u64,
}

impl GrowthTrace {
    fn empty(n: u32, seed: u64, stream_id: u64, poisson: bool, t_max: f64) -> Self {
        Self {
            n,
            seed,
            stream_id,
            arrivals: Vec::new(),
            times: poisson.then(Vec::new),
            index: RowGrid::new(n),
            cluster: CylinderCluster::new(n),
            t_max,
            walk_ops: 0,
        }
    }

    fn settle(&mut self, site: Site, time: Option<f64>) {
        self.cluster.occupy(site);
        self.arrivals.push(site);
        if let (Some(times), Some(t)) = (self.times.as_mut(), time) {
            times.push(t);
        }
        let idx = self.arrivals.len() as u32;
        self.index.set(site, idx);
    }

    /// Rebuild a trace from a recorded arrival sequence (for replay and for
    /// constructing exact test fixtures).
    pub fn from_recorded(
        n: u32,
        arrivals: Vec<Site>,
        times: Option<Vec<f64>>,
    ) -> Result<Self, GrowthError> {
        if n == 0 {
            return Err(GrowthError::ZeroCircumference);
        }
        if let Some(t) = &times {
            if t.len() != arrivals.len() {
                return Err(GrowthError::BadTrace("times and arrivals differ in length".into()));
            }
            if t.windows(2).any(|w| w[1] < w[0]) || t.iter().any(|&v| v < 0.0) {
                return Err(GrowthError::BadTrace("times must be nonnegative, nondecreasing".into()));
            }
        }
        let t_max = match &times {
            Some(t) => t.last().copied().unwrap_or(0.0),
            None => arrivals.len() as f64,
        };
        let mut trace = Self::empty(n, 0, 0, times.is_some(), t_max);
        trace.times = times;
        for (i, &s) in arrivals.iter().enumerate() {
            let s = s.reduced(n);
            if s.n2 < 1 {
                return Err(GrowthError::BadTrace(format!("arrival {s:?} below row 1")));
            }
            if trace.cluster.occupied(s.n1, s.n2) {
                return Err(GrowthError::BadTrace(format!("duplicate arrival {s:?}")));
            }
            trace.cluster.occupy(s);
            trace.index.set(s, (i + 1) as u32);
        }
        trace.arrivals = arrivals.iter().map(|s| s.reduced(n)).collect();
        Ok(trace)
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn particles(&self) -> u64 {
        self.arrivals.len() as u64
    }

    pub fn arrivals(&self) -> &[Site] {
        &self.arrivals
    }

    pub fn times(&self) -> Option<&[f64]> {
        self.times.as_deref()
    }

    pub fn is_poisson(&self) -> bool {
        self.times.is_some()
    }

    /// 1-based settlement index, None for sites never settled.
    pub fn arrival_index(&self, s: Site) -> Option<u32> {
        let s = s.reduced(self.n);
        match self.index.get(s) {
            Some(&i) if i > 0 => Some(i),
            _ => None,
        }
    }

    /// Clock time of settlement (Poisson mode only).
    pub fn arrival_time(&self, s: Site) -> Option<f64> {
        let times = self.times.as_ref()?;
        self.arrival_index(s).map(|i| times[(i - 1) as usize])
    }

    pub fn cluster(&self) -> &CylinderCluster {
        &self.cluster
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn walk_ops(&self) -> u64 {
        self.walk_ops
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
}

fn resolve_kernels<'a>(
    n: u32,
    cfg: &WalkConfig,
    shared: Option<&'a KernelSet>,
    owned: &'a mut Option<KernelSet>,
) -> Result<Option<&'a KernelSet>, GrowthError> {
    if !cfg.accelerated {
        return Ok(None);
    }
    match shared {
        Some(k) => {
            assert_eq!(k.n(), n, "kernel set built for a different circumference");
            Ok(Some(k))
        }
        None => {
            *owned = Some(KernelSet::new(n)?);
            Ok(owned.as_ref())
        }
    }
}

/// Grow T particles on the cylinder of circumference N: each starts at
/// (n1, 0) with n1 uniform, walks until the first non-member site, and
/// settles there.
pub fn grow_cylinder(
    n: u32,
    t: u64,
    seed: u64,
    stream_id: u64,
    cfg: &WalkConfig,
) -> Result<GrowthTrace, GrowthError> {
    grow_cylinder_with(n, t, seed, stream_id, cfg, None)
}

/// As [`grow_cylinder`], reusing a shared [`KernelSet`] across runs.
pub fn grow_cylinder_with(
    n: u32,
    t: u64,
    seed: u64,
    stream_id: u64,
    cfg: &WalkConfig,
    kernels: Option<&KernelSet>,
) -> Result<GrowthTrace, GrowthError> {
    cfg.validate()?;
    if n == 0 {
        return Err(GrowthError::ZeroCircumference);
    }
    if t >= u64::from(u32::MAX) {
        return Err(GrowthError::TooManyParticles(t));
    }
    let mut owned = None;
    let kernels = resolve_kernels(n, cfg, kernels, &mut owned)?;
    let mut rng = StreamRng::new(seed, stream_id).channel(CH_WALK);
    let mut trace = GrowthTrace::empty(n, seed, stream_id, false, t as f64);
    for particle in 1..=t {
        let start = Site::new(rng.gen_range(1..=i64::from(n)), 0);
        let (site, ops) = walk_to_frontier(&trace.cluster, start, &mut rng, cfg, kernels, cfg.step_cap)
            .map_err(|CapHit| GrowthError::StepCapExceeded {
                seed,
                stream: stream_id,
                particle,
                cap: cfg.step_cap,
            })?;
        trace.walk_ops += ops;
        trace.settle(site, None);
    }
    Ok(trace)
}

/// Poisson-clock growth: particles are added at the jump times of a unit-rate
/// Poisson process up to `t_max`, each exactly as in [`grow_cylinder`]. The
/// clock and the walks draw from distinct RNG streams, so the particle count
/// is independent of the walk randomness.
pub fn grow_cylinder_poisson(
    n: u32,
    t_max: f64,
    seed: u64,
    stream_id: u64,
    cfg: &WalkConfig,
) -> Result<GrowthTrace, GrowthError> {
    grow_cylinder_poisson_with(n, t_max, seed, stream_id, cfg, None)
}

pub fn grow_cylinder_poisson_with(
    n: u32,
    t_max: f64,
    seed: u64,
    stream_id: u64,
    cfg: &WalkConfig,
    kernels: Option<&KernelSet>,
) -> Result<GrowthTrace, GrowthError> {
    cfg.validate()?;
    if n == 0 {
        return Err(GrowthError::ZeroCircumference);
    }
    if !(t_max >= 0.0) {
        return Err(GrowthError::NegativeHorizon(t_max));
    }
    let mut owned = None;
    let kernels = resolve_kernels(n, cfg, kernels, &mut owned)?;
    let base = StreamRng::new(seed, stream_id);
    let mut clock = base.channel(CH_CLOCK);
    let mut jump_times = Vec::new();
    let mut s = 0.0f64;
    loop {
        s += clock.sample::<f64, _>(Exp1);
        if s > t_max {
            break;
        }
        jump_times.push(s);
        if jump_times.len() >= u32::MAX as usize {
            return Err(GrowthError::TooManyParticles(jump_times.len() as u64));
        }
    }
    let mut rng = base.channel(CH_WALK);
    let mut trace = GrowthTrace::empty(n, seed, stream_id, true, t_max);
    for (i, &time) in jump_times.iter().enumerate() {
        let start = Site::new(rng.gen_range(1..=i64::from(n)), 0);
        let (site, ops) = walk_to_frontier(&trace.cluster, start, &mut rng, cfg, kernels, cfg.step_cap)
            .map_err(|CapHit| GrowthError::StepCapExceeded {
                seed,
                stream: stream_id,
                particle: (i + 1) as u64,
                cap: cfg.step_cap,
            })?;
        trace.walk_ops += ops;
        trace.settle(site, Some(time));
    }
    Ok(trace)
}

/// Empirical harmonic measure of the cluster frontier: `samples` independent
/// walks from the uniform row-0 source, recording first-exit sites without
/// occupying them. Returned frequencies sum to 1 (for samples > 0).
pub fn estimate_harmonic_measure(
    cluster: &CylinderCluster,
    samples: u64,
    seed: u64,
    stream_id: u64,
    cfg: &WalkConfig,
) -> Result<std::collections::BTreeMap<Site, f64>, GrowthError> {
    cfg.validate()?;
    let n = cluster.n();
    let mut owned = None;
    let kernels = resolve_kernels(n, cfg, None, &mut owned)?;
    let mut rng = StreamRng::new(seed, stream_id).channel(CH_WALK);
    let mut counts: std::collections::BTreeMap<Site, u64> = std::collections::BTreeMap::new();
    for walk in 1..=samples {
        let start = Site::new(rng.gen_range(1..=i64::from(n)), 0);
        let (site, _) = walk_to_frontier(cluster, start, &mut rng, cfg, kernels, cfg.step_cap)
            .map_err(|CapHit| GrowthError::StepCapExceeded {
                seed,
                stream: stream_id,
                particle: walk,
                cap: cfg.step_cap,
            })?;
        *counts.entry(site).or_insert(0) += 1;
    }
    Ok(counts
        .into_iter()
        .map(|(s, c)| (s, c as f64 / samples as f64))
        .collect())
}

/// Occupied sites with n2 >= N whose surrounding height-N slab (rows
/// `n2 - N/2 ..= n2 - N/2 + N - 1`, all columns, implicit base rows included)
/// holds at most `b N^2` cluster sites. Empty in healthy clusters.
pub fn detect_thin_tentacle(cluster: &CylinderCluster, b: f64) -> Vec<Site> {
    assert!(b > 0.0 && b < 1.0, "thinness fraction must be in (0, 1)");
    let n = i64::from(cluster.n());
    let threshold = b * (n * n) as f64;
    let mut out = Vec::new();
    for s in cluster.iter_occupied() {
        if s.n2 < n {
            continue;
        }
        let lo = s.n2 - n / 2;
        let count: i64 = (lo..lo + n).map(|row| i64::from(cluster.row_count(row))).sum();
        if (count as f64) <= threshold {
            out.push(s);
        }
    }
    out
}

/// Frontier band widths `(inner, outer)` around the deterministic height
/// T/N: `inner` is how far the highest full row lags below it, `outer` how
/// far the highest occupied site pokes above it. Both zero for a perfectly
/// flat cluster.
pub fn band_width(trace: &GrowthTrace) -> (u32, u32) {
    let line = (trace.particles() / u64::from(trace.n())) as i64;
    let inner = (line - trace.cluster().max_full_row()).max(0) as u32;
    let outer = (trace.cluster().max_row() - line).max(0) as u32;
    (inner, outer)
}

/// Single-source aggregation on the planar lattice: A(1) = {origin}; each
/// later particle walks from the origin until its first step outside the
/// cluster.
#[derive(Debug, Clone)]
pub struct PlanarCluster {
    sites: HashSet<(i32, i32)>,
    order: Vec<(i32, i32)>,
}

impl PlanarCluster {
    pub fn contains(&self, p: (i32, i32)) -> bool {
        self.sites.contains(&p)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn order(&self) -> &[(i32, i32)] {
        &self.order
    }

    /// (in-radius, out-radius): the largest disk inside the cluster and the
    /// smallest disk containing it, both centred at the origin.
    pub fn roundness(&self) -> (f64, f64) {
        let r_out = self
            .order
            .iter()
            .map(|&(x, y)| f64::from(x).hypot(f64::from(y)))
            .fold(0.0f64, f64::max);
        let reach = r_out.ceil() as i32 + 1;
        let mut r_in = f64::from(reach).hypot(f64::from(reach));
        for x in -reach..=reach {
            for y in -reach..=reach {
                if !self.sites.contains(&(x, y)) {
                    r_in = r_in.min(f64::from(x).hypot(f64::from(y)));
                }
            }
        }
        (r_in, r_out)
    }
}

pub fn grow_planar(
    t: u64,
    seed: u64,
    stream_id: u64,
    step_cap: u64,
) -> Result<PlanarCluster, GrowthError> {
    let mut rng = StreamRng::new(seed, stream_id).channel(CH_WALK);
    let mut cluster = PlanarCluster { sites: HashSet::new(), order: Vec::new() };
    for particle in 1..=t {
        let mut pos = (0i32, 0i32);
        let mut ops = 0u64;
        while cluster.sites.contains(&pos) {
            ops += 1;
            if ops > step_cap {
                return Err(GrowthError::StepCapExceeded {
                    seed,
                    stream: stream_id,
                    particle,
                    cap: step_cap,
                });
            }
            match rng.gen_range(0..4u32) {
                0 => pos.0 += 1,
                1 => pos.0 -= 1,
                2 => pos.1 += 1,
                _ => pos.1 -= 1,
            }
        }
        cluster.sites.insert(pos);
        cluster.order.push(pos);
    }
    Ok(cluster)
}

/// Directed aggregation in the first quadrant: each particle walks from the
/// origin stepping East or North with probability 1/2 until the first
/// unoccupied site. Every walk terminates within T+1 steps because each step
/// strictly increases n1 + n2.
pub fn grow_directed_propp(t: u64, seed: u64, stream_id: u64) -> PlanarCluster {
    let mut rng = StreamRng::new(seed, stream_id).channel(CH_WALK);
    let mut cluster = PlanarCluster { sites: HashSet::new(), order: Vec::new() };
    for _ in 0..t {
        let mut pos = (0i32, 0i32);
        let mut steps = 0u64;
        while cluster.sites.contains(&pos) {
            if rng.gen::<bool>() {
                pos.0 += 1;
            } else {
                pos.1 += 1;
            }
            steps += 1;
            debug_assert!(steps <= cluster.order.len() as u64 + 1);
        }
        cluster.sites.insert(pos);
        cluster.order.push(pos);
    }
    cluster
}
