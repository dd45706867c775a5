//! Discrete harmonic modes on the cylinder, test functions, and the pairings
//! that turn a grown cluster into scalar fluctuation statistics.
//!
//! The vertical decay rate of the mode with horizontal frequency k solves the
//! lattice dispersion relation `1 - cos(2 pi k / N) = cosh(q / N) - 1`; the
//! same rate drives the analytic walk kernels in the growth module, so both
//! sides of the crate agree on what "harmonic" means by construction.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use crate::growth::GrowthTrace;
use crate::lattice::Site;

/// Relative interpolation error profiles must meet at construction.
pub const PROFILE_INTERP_TOL: f64 = 1e-8;
const PROFILE_MAX_SAMPLES: usize = (1 << 17) + 1;

#[derive(Debug, Error)]
pub enum HarmonicError {
    #[error("circumference must be positive")]
    ZeroCircumference,
    #[error("test function uses mode k = {k} but the cutoff for N = {n} is K <= N/4 = {cut}")]
    ModeCutoff { k: u32, n: u32, cut: u32 },
    #[error(
        "psi0 at ({n1}, {n2}) sits {delta:.1} rows from the reference height; \
         the exponential guard allows {bound:.1} (use eval_scaled for far sites)"
    )]
    GuardBand { n1: i64, n2: i64, delta: f64, bound: f64 },
    #[error("invalid test function: {0}")]
    BadTestFunction(String),
    #[error("profile needs more than {max} samples to meet the interpolation budget")]
    ProfileResolution { max: usize },
    #[error("trace has {particles} particles but floor(y0 N^2) = {expected}")]
    TraceMismatch { particles: u64, expected: u64 },
    #[error("pairing requires a {expected} trace")]
    WrongTraceKind { expected: &'static str },
    #[error("{missing} sites in the support band have no arrival time, e.g. {sample:?}")]
    IncompleteCoverage { missing: usize, sample: Vec<Site> },
    #[error(
        "test-function support ends at c2 = {c2} but the cluster is provably \
         absent above height {reach}"
    )]
    SupportBeyondTrace { c2: f64, reach: f64 },
}

/// Vertical decay rate q(k, N) >= 0 solving
/// `1 - cos(2 pi k / N) = cosh(q / N) - 1`,
/// equivalently `q = N arccosh(2 - cos(2 pi k / N))`.
///
/// k is reduced mod N to its minimal residue first; q(0) = 0 and
/// q(k, N) = 2 pi |k| + O(1/N^2) for fixed k. Evaluated through `ln_1p` so
/// small k/N keeps full relative precision.
pub fn solve_q(k: i64, n: u32) -> Result<f64, HarmonicError> {
    if n == 0 {
        return Err(HarmonicError::ZeroCircumference);
    }
    let nn = i64::from(n);
    let mut kr = k.rem_euclid(nn);
    if 2 * kr > nn {
        kr -= nn;
    }
    if kr == 0 {
        return Ok(0.0);
    }
    // cosh(q/N) = 1 + 2 sin^2(pi k / N)
    let s = 2.0 * (PI * kr.unsigned_abs() as f64 / f64::from(n)).sin().powi(2);
    Ok(f64::from(n) * (s + (s * (s + 2.0)).sqrt()).ln_1p())
}

/// Real vertical profile sampled on a uniform grid over `[c1, c2]`, evaluated
/// by piecewise 4-point cubic interpolation and integrated exactly on the
/// interpolant. Profiles vanish at and outside the support interval; the
/// constructors enforce the interpolation budget [`PROFILE_INTERP_TOL`].
#[derive(Debug, Clone)]
pub struct Profile {
    c1: f64,
    c2: f64,
    values: Vec<f64>,
}

/// Monomial coefficients of the cubic through (-1,v0),(0,v1),(1,v2),(2,v3).
#[inline]
fn cell_cubic(v0: f64, v1: f64, v2: f64, v3: f64) -> [f64; 4] {
    [
        v1,
        -v0 / 3.0 - v1 / 2.0 + v2 - v3 / 6.0,
        v0 / 2.0 - v1 + v2 / 2.0,
        -v0 / 6.0 + v1 / 2.0 - v2 / 2.0 + v3 / 6.0,
    ]
}

impl Profile {
    /// Build from samples (uniform over `[c1, c2]`, endpoints included).
    /// The endpoints must vanish and the grid must already satisfy the
    /// interpolation budget, which is checked by interpolating the odd
    /// samples from the even ones.
    pub fn from_samples(c1: f64, c2: f64, values: Vec<f64>) -> Result<Self, HarmonicError> {
        if !(c1.is_finite() && c2.is_finite() && c1 < c2) {
            return Err(HarmonicError::BadTestFunction("need c1 < c2, finite".into()));
        }
        if values.len() < 9 || values.len() % 2 == 0 {
            return Err(HarmonicError::BadTestFunction(
                "grid profiles need an odd sample count >= 9".into(),
            ));
        }
        let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if max == 0.0 {
            return Err(HarmonicError::BadTestFunction("profile is identically zero".into()));
        }
        if values[0].abs() > 1e-12 * max || values[values.len() - 1].abs() > 1e-12 * max {
            return Err(HarmonicError::BadTestFunction(
                "profiles must vanish at the support endpoints".into(),
            ));
        }
        let coarse: Vec<f64> = values.iter().copied().step_by(2).collect();
        let trial = Self { c1, c2, values: coarse };
        let h = (c2 - c1) / (values.len() - 1) as f64;
        let worst = (0..values.len())
            .step_by(2)
            .map(|i| (trial.eval(c1 + (i + 1) as f64 * h) - values.get(i + 1).copied().unwrap_or(0.0)).abs())
            .fold(0.0f64, f64::max);
        // The coarse grid doubles the step, so its midpoint error bounds the
        // fine grid's own interpolation error from above.
        if worst > PROFILE_INTERP_TOL * max {
            return Err(HarmonicError::BadTestFunction(format!(
                "profile grid too coarse: decimation error {worst:.3e} exceeds {:.1e} of max",
                PROFILE_INTERP_TOL
            )));
        }
        Ok(Self { c1, c2, values })
    }

    /// Sample a function, doubling the grid until cubic interpolation
    /// reproduces it to [`PROFILE_INTERP_TOL`] of its max at cell midpoints.
    pub fn from_fn(
        c1: f64,
        c2: f64,
        f: impl Fn(f64) -> f64,
    ) -> Result<Self, HarmonicError> {
        if !(c1.is_finite() && c2.is_finite() && c1 < c2) {
            return Err(HarmonicError::BadTestFunction("need c1 < c2, finite".into()));
        }
        let mut cells = 128usize;
        loop {
            let h = (c2 - c1) / cells as f64;
            let values: Vec<f64> =
                (0..=cells).map(|i| if i == 0 || i == cells { 0.0 } else { f(c1 + i as f64 * h) }).collect();
            let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let p = Self { c1, c2, values };
            let worst = (0..cells)
                .map(|i| {
                    let y = c1 + (i as f64 + 0.5) * h;
                    (p.eval(y) - f(y)).abs()
                })
                .fold(0.0f64, f64::max);
            if worst <= PROFILE_INTERP_TOL * max && max > 0.0 {
                return Ok(p);
            }
            cells *= 2;
            if cells + 1 > PROFILE_MAX_SAMPLES {
                return Err(HarmonicError::ProfileResolution { max: PROFILE_MAX_SAMPLES });
            }
        }
    }

    pub fn support(&self) -> (f64, f64) {
        (self.c1, self.c2)
    }

    pub fn grid_step(&self) -> f64 {
        (self.c2 - self.c1) / (self.values.len() - 1) as f64
    }

    #[inline]
    fn ghost(&self, i: isize) -> f64 {
        if i < 0 || i as usize >= self.values.len() {
            0.0
        } else {
            self.values[i as usize]
        }
    }

    /// Interpolated value; exactly zero outside `[c1, c2]`.
    pub fn eval(&self, y: f64) -> f64 {
        if y < self.c1 || y > self.c2 {
            return 0.0;
        }
        let cells = self.values.len() - 1;
        let h = (self.c2 - self.c1) / cells as f64;
        let pos = (y - self.c1) / h;
        let cell = (pos.floor() as usize).min(cells - 1);
        let t = pos - cell as f64;
        let i = cell as isize;
        let [a, b, c, d] = cell_cubic(self.ghost(i - 1), self.ghost(i), self.ghost(i + 1), self.ghost(i + 2));
        ((d * t + c) * t + b) * t + a
    }

    /// Exact integral of the interpolant over `[a, b]` (clamped to support).
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        let lo = a.max(self.c1);
        let hi = b.min(self.c2);
        if lo >= hi {
            return 0.0;
        }
        let cells = self.values.len() - 1;
        let h = (self.c2 - self.c1) / cells as f64;
        let cell_of = |y: f64| (((y - self.c1) / h).floor() as usize).min(cells - 1);
        let (c_lo, c_hi) = (cell_of(lo), cell_of(hi));
        let mut acc = 0.0;
        for cell in c_lo..=c_hi {
            let i = cell as isize;
            let [a0, b0, c0, d0] =
                cell_cubic(self.ghost(i - 1), self.ghost(i), self.ghost(i + 1), self.ghost(i + 2));
            let y0 = self.c1 + cell as f64 * h;
            let t0 = if cell == c_lo { (lo - y0) / h } else { 0.0 };
            let t1 = if cell == c_hi { (hi - y0) / h } else { 1.0 };
            let anti = |t: f64| ((d0 / 4.0 * t + c0 / 3.0) * t + b0 / 2.0) * t * t + a0 * t;
            acc += h * (anti(t1) - anti(t0));
        }
        acc
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// The default smooth bump `exp(1 - 1/(1 - u^2))` on `[c1, c2]`,
/// rescaled so its value at `y0` is exactly 1.
fn bump_profile(c1: f64, c2: f64, y0: f64) -> Result<Profile, HarmonicError> {
    let raw = move |y: f64| {
        let u = (2.0 * y - c1 - c2) / (c2 - c1);
        if u.abs() >= 1.0 {
            0.0
        } else {
            (1.0 - 1.0 / (1.0 - u * u)).exp()
        }
    };
    let at_y0 = raw(y0);
    if at_y0 <= 0.0 {
        return Err(HarmonicError::BadTestFunction(
            "bump profile needs y0 strictly inside (c1, c2)".into(),
        ));
    }
    Profile::from_fn(c1, c2, move |y| raw(y) / at_y0)
}

/// On-disk form of a test function (see module docs for the JSON layout).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TestFunctionSpec {
    #[serde(rename = "K")]
    pub k_max: u32,
    pub c1: f64,
    pub c2: f64,
    pub y0: f64,
    pub modes: Vec<ModeSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModeSpec {
    pub k: u32,
    pub re_amp: f64,
    pub im_amp: f64,
    pub profile: ProfileSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum ProfileSpec {
    Named(String),
    Grid { grid: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct Mode {
    pub k: u32,
    pub amp: Complex64,
    pub profile: Profile,
}

/// A horizontally periodic test function
/// `phi(x, y) = alpha_0(y) + sum_{k>=1} 2 Re(alpha_k(y) e^{2 pi i k x})`
/// with every vertical profile supported in `(0, infinity)`.
/// Only k >= 0 is stored; negative modes are the conjugates.
#[derive(Debug, Clone)]
pub struct TestFunction {
    spec: TestFunctionSpec,
    pub c1: f64,
    pub c2: f64,
    pub y0: f64,
    modes: Vec<Mode>,
}

impl TestFunction {
    pub fn from_json(s: &str) -> Result<Self, HarmonicError> {
        let spec: TestFunctionSpec = serde_json::from_str(s)
            .map_err(|e| HarmonicError::BadTestFunction(format!("json: {e}")))?;
        Self::from_spec(spec)
    }

    pub fn from_spec(spec: TestFunctionSpec) -> Result<Self, HarmonicError> {
        let bad = |m: &str| Err(HarmonicError::BadTestFunction(m.into()));
        if !(spec.c1 > 0.0 && spec.c2 > spec.c1 && spec.c1.is_finite() && spec.c2.is_finite()) {
            return bad("need 0 < c1 < c2");
        }
        if !(spec.y0 > spec.c1 && spec.y0 < spec.c2) {
            return bad("need y0 strictly inside (c1, c2)");
        }
        if spec.modes.is_empty() {
            return bad("at least one mode");
        }
        let mut modes = Vec::with_capacity(spec.modes.len());
        let mut seen = std::collections::BTreeSet::new();
        for m in &spec.modes {
            if !seen.insert(m.k) {
                return bad("duplicate mode index");
            }
            if m.k == 0 && m.im_amp != 0.0 {
                return bad("the k = 0 amplitude must be real for a real test function");
            }
            let profile = match &m.profile {
                ProfileSpec::Named(name) if name == "bump" => bump_profile(spec.c1, spec.c2, spec.y0)?,
                ProfileSpec::Named(other) => {
                    return bad(&format!("unknown profile name {other:?}"));
                }
                ProfileSpec::Grid { grid } => Profile::from_samples(spec.c1, spec.c2, grid.clone())?,
            };
            modes.push(Mode { k: m.k, amp: Complex64::new(m.re_amp, m.im_amp), profile });
        }
        let max_k = modes.iter().map(|m| m.k).max().unwrap();
        if max_k != spec.k_max {
            return bad(&format!("K = {} but the largest mode index is {max_k}", spec.k_max));
        }
        Ok(Self { c1: spec.c1, c2: spec.c2, y0: spec.y0, modes, spec })
    }

    pub fn spec(&self) -> &TestFunctionSpec {
        &self.spec
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.spec).expect("spec serializes")
    }

    pub fn k_max(&self) -> u32 {
        self.spec.k_max
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn mode(&self, k: u32) -> Option<&Mode> {
        self.modes.iter().find(|m| m.k == k)
    }

    /// alpha_k(y) (zero for modes not present).
    pub fn alpha(&self, k: u32, y: f64) -> Complex64 {
        self.mode(k).map_or(Complex64::new(0.0, 0.0), |m| m.amp * m.profile.eval(y))
    }

    /// Pointwise value of the (real) test function.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let mut v = 0.0;
        for m in &self.modes {
            let g = m.profile.eval(y);
            if g == 0.0 {
                continue;
            }
            if m.k == 0 {
                v += m.amp.re * g;
            } else {
                let th = 2.0 * PI * f64::from(m.k) * x;
                v += 2.0 * (m.amp.re * th.cos() - m.amp.im * th.sin()) * g;
            }
        }
        v
    }
}

/// Value with an explicit exponential scale, `mantissa * exp(log_scale)`,
/// for probing modes far outside the plain-f64 guard band.
#[derive(Debug, Clone, Copy)]
pub struct ScaledReal {
    pub mantissa: f64,
    pub log_scale: f64,
}

impl ScaledReal {
    pub fn to_f64(self) -> f64 {
        self.mantissa * self.log_scale.exp()
    }
}

#[derive(Debug, Clone, Copy)]
struct ModeTerm {
    k: f64,
    q_over_n: f64,
    re: f64,
    im: f64,
}

/// Evaluator for the discrete harmonic extension
/// `psi0(n) = sum_{0<|k|<=K} alpha_k(T/N^2) e^{2 pi i k n1 / N} e^{(q_k/N)(n2 - T/N)}`
/// with the conjugate pair folded in, so values are real.
///
/// The k = 0 profile never enters: it pairs against the deterministic strip,
/// not against the harmonic modes. Construction enforces the mode cutoff
/// K <= N/4 and evaluation guards the growing exponential with a band of
/// 64 ln N rows around the reference height T/N.
#[derive(Debug, Clone)]
pub struct HarmonicModes {
    n: u32,
    t: f64,
    guard: f64,
    terms: Vec<ModeTerm>,
}

impl HarmonicModes {
    pub fn new(tf: &TestFunction, n: u32, t: f64) -> Result<Self, HarmonicError> {
        if n == 0 {
            return Err(HarmonicError::ZeroCircumference);
        }
        let cut = n / 4;
        let y = t / (f64::from(n) * f64::from(n));
        let mut terms = Vec::new();
        for m in tf.modes() {
            if m.k == 0 {
                continue;
            }
            if m.k > cut {
                return Err(HarmonicError::ModeCutoff { k: m.k, n, cut });
            }
            let amp_y = m.amp * m.profile.eval(y);
            let q = solve_q(i64::from(m.k), n)?;
            terms.push(ModeTerm {
                k: f64::from(m.k),
                q_over_n: q / f64::from(n),
                re: amp_y.re,
                im: amp_y.im,
            });
        }
        Ok(Self { n, t, guard: 64.0 * f64::from(n).ln(), terms })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    /// Reference height T/N: the row around which the modes are centred.
    pub fn reference_row(&self) -> f64 {
        self.t / f64::from(self.n)
    }

    #[inline]
    pub fn eval_site(&self, n1: i64, n2: i64) -> Result<f64, HarmonicError> {
        if self.terms.is_empty() {
            return Ok(0.0);
        }
        let delta = n2 as f64 - self.reference_row();
        if delta.abs() > self.guard {
            return Err(HarmonicError::GuardBand {
                n1,
                n2,
                delta: delta.abs(),
                bound: self.guard,
            });
        }
        let x = n1 as f64 / f64::from(self.n);
        let mut v = 0.0;
        for t in &self.terms {
            let th = 2.0 * PI * t.k * x;
            v += 2.0 * (t.re * th.cos() - t.im * th.sin()) * (t.q_over_n * delta).exp();
        }
        Ok(v)
    }

    pub fn eval(&self, s: Site) -> Result<f64, HarmonicError> {
        let s = s.reduced(self.n);
        self.eval_site(s.n1, s.n2)
    }

    /// Log-scaled evaluation that stays finite arbitrarily far from the
    /// reference height; the terms are accumulated relative to the largest
    /// exponential so no intermediate overflows.
    pub fn eval_scaled(&self, s: Site) -> ScaledReal {
        let s = s.reduced(self.n);
        if self.terms.is_empty() {
            return ScaledReal { mantissa: 0.0, log_scale: 0.0 };
        }
        let delta = s.n2 as f64 - self.reference_row();
        let x = s.n1 as f64 / f64::from(self.n);
        let top = self
            .terms
            .iter()
            .map(|t| t.q_over_n * delta)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut mant = 0.0;
        for t in &self.terms {
            let th = 2.0 * PI * t.k * x;
            mant += 2.0 * (t.re * th.cos() - t.im * th.sin()) * (t.q_over_n * delta - top).exp();
        }
        ScaledReal { mantissa: mant, log_scale: top }
    }
}

/// Convenience wrapper for single evaluations; hot paths should hold a
/// [`HarmonicModes`] instead. The imaginary part is identically zero because
/// conjugate mode pairs are folded.
pub fn psi0(s: Site, t: f64, n: u32, tf: &TestFunction) -> Result<Complex64, HarmonicError> {
    Ok(Complex64::new(HarmonicModes::new(tf, n, t)?.eval(s)?, 0.0))
}

/// Variance weight of mode k at height y0:
/// `m_k = (1 - e^{-4 pi k y0}) / (4 pi k)`.
pub fn circle_mode_weight(k: u32, y0: f64) -> f64 {
    let a = 4.0 * PI * f64::from(k);
    -(-a * y0).exp_m1() / a
}

/// Green's kernel of the mode-k vertical operator on `(0, infinity)` with a
/// Dirichlet floor at 0. `k = 0` degenerates to `min(y, y')`; on the diagonal
/// the k >= 1 kernel reproduces [`circle_mode_weight`].
pub fn gff_green_kernel(k: u32, y: f64, yp: f64) -> f64 {
    if k == 0 {
        y.min(yp)
    } else {
        let a = 2.0 * PI * f64::from(k);
        ((-a * (y - yp).abs()).exp() - (-a * (y + yp)).exp()) / (2.0 * a)
    }
}

/// Limit variance of the discrepancy pairing:
/// `sum_{0 < |k| <= K} m_k |alpha_k(y0)|^2`.
pub fn theoretical_variance_circle(tf: &TestFunction, y0: f64) -> Result<f64, HarmonicError> {
    if !(y0 > tf.c1 && y0 < tf.c2) {
        return Err(HarmonicError::BadTestFunction(
            "variance is evaluated at a height strictly inside the support".into(),
        ));
    }
    Ok(tf
        .modes()
        .iter()
        .filter(|m| m.k >= 1)
        .map(|m| {
            let a = m.amp * m.profile.eval(y0);
            2.0 * circle_mode_weight(m.k, y0) * a.norm_sqr()
        })
        .sum())
}

fn adaptive_simpson_rec(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        adaptive_simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + adaptive_simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

pub(crate) fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a >= b {
        return 0.0;
    }
    let fa = f(a);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let fb = f(b);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    adaptive_simpson_rec(f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Limit variance of the lateness pairing: for each mode (counting +/-k),
/// the Green's-kernel quadratic form of its profile,
/// `sum_{|k| <= K} integral integral conj(alpha_k(y)) G_k(y, y') alpha_k(y') dy dy'`.
/// The kernel kink at y = y' is split out, and the nested quadrature targets
/// a relative error of about 1e-8.
pub fn theoretical_variance_gff(tf: &TestFunction) -> Result<f64, HarmonicError> {
    let (c1, c2) = (tf.c1, tf.c2);
    let mut total = 0.0;
    for m in tf.modes() {
        let g = &m.profile;
        let kbound = if m.k == 0 { c2 } else { 1.0 / (4.0 * PI * f64::from(m.k)) };
        let scale = (g.max_abs() * (c2 - c1)).powi(2) * kbound;
        let inner_tol = 1e-10 * scale / (c2 - c1).max(1.0);
        let inner = |y: f64| {
            let fk = |yp: f64| gff_green_kernel(m.k, y, yp) * g.eval(yp);
            adaptive_simpson(&fk, c1, y.clamp(c1, c2), inner_tol)
                + adaptive_simpson(&fk, y.clamp(c1, c2), c2, inner_tol)
        };
        let quad = adaptive_simpson(&|y: f64| g.eval(y) * inner(y), c1, c2, 1e-10 * scale);
        let weight = if m.k == 0 { 1.0 } else { 2.0 };
        total += weight * m.amp.norm_sqr() * quad;
    }
    Ok(total)
}

/// Rows whose lattice squares meet the support band of `tf`.
fn support_rows(tf: &TestFunction, n: u32) -> (i64, i64) {
    let nf = f64::from(n);
    let lo = (tf.c1 * nf).floor() as i64 + 1;
    let hi = (tf.c2 * nf).ceil() as i64;
    (lo.max(1), hi)
}

/// Pairing of the discrepancy field against `tf`:
/// `N * (sum over settled sites of the midpoint-rule cell integral of phi
///       minus the strip integral over 0 < y <= T/N^2)`.
/// Only the k = 0 profile survives integrating the strip across x, and that
/// one-dimensional integral is evaluated exactly on the profile interpolant.
pub fn discrepancy_pairing(
    trace: &GrowthTrace,
    tf: &TestFunction,
    y0: f64,
) -> Result<f64, HarmonicError> {
    if trace.is_poisson() {
        return Err(HarmonicError::WrongTraceKind { expected: "discrete-time" });
    }
    let n = trace.n();
    let nf = f64::from(n);
    let expected = (y0 * nf * nf).floor() as u64;
    if trace.particles() != expected {
        return Err(HarmonicError::TraceMismatch { particles: trace.particles(), expected });
    }
    let y_top = trace.particles() as f64 / (nf * nf);
    let reach = y_top + (64.0 * nf.ln()).max(1.0) / nf;
    if tf.c2 > reach {
        return Err(HarmonicError::SupportBeyondTrace { c2: tf.c2, reach });
    }
    let (row_lo, row_hi) = support_rows(tf, n);
    let mut acc = 0.0;
    for s in trace.arrivals() {
        if s.n2 < row_lo || s.n2 > row_hi {
            continue;
        }
        acc += tf.eval((s.n1 as f64 - 0.5) / nf, (s.n2 as f64 - 0.5) / nf);
    }
    let strip = tf
        .mode(0)
        .map_or(0.0, |m| m.amp.re * m.profile.integral(0.0, y_top));
    Ok(nf * (acc / (nf * nf) - strip))
}

/// Pairing of the lateness field against `tf`:
/// `sum_n integral over the cell of (F(n)/N - y N) phi(x, y) dx dy`,
/// with phi frozen at the cell centre (midpoint rule) and the linear factor
/// integrated exactly across the cell row. Every cell meeting the support
/// band must have an arrival time; unfilled cells are reported, not guessed.
pub fn lateness_pairing(trace: &GrowthTrace, tf: &TestFunction) -> Result<f64, HarmonicError> {
    if !trace.is_poisson() {
        return Err(HarmonicError::WrongTraceKind { expected: "poisson-clock" });
    }
    let n = trace.n();
    let nf = f64::from(n);
    let (row_lo, row_hi) = support_rows(tf, n);
    let mut acc = 0.0;
    let mut missing = 0usize;
    let mut sample = Vec::new();
    for n2 in row_lo..=row_hi {
        for n1 in 1..=i64::from(n) {
            let site = Site::new(n1, n2);
            match trace.arrival_time(site) {
                Some(f) => {
                    let phi = tf.eval((n1 as f64 - 0.5) / nf, (n2 as f64 - 0.5) / nf);
                    acc += phi * (f / nf - (n2 as f64 - 0.5));
                }
                None => {
                    missing += 1;
                    if sample.len() < 8 {
                        sample.push(site);
                    }
                }
            }
        }
    }
    if missing > 0 {
        return Err(HarmonicError::IncompleteCoverage { missing, sample });
    }
    Ok(acc / (nf * nf))
}
