//! AWGN hops under continuous fading.
//!
//! With SNRs `g1`, `g2` on the two hops the per-state capacities are
//! `log2(1 + g)`, and the threshold rule sends the block to the relay iff
//! `g2 > (1 + g1)^rho - 1`. Ties have probability zero for continuous
//! densities, so `C1(rho)` and `C2(rho)` are plain integrals over the two
//! decision regions and `C1 - C2` is continuous and non-decreasing in `rho`.
//!
//! Independent Rayleigh fading (exponential SNRs) is integrated by tensor
//! Gauss–Legendre quadrature after mapping each SNR through its CDF; other
//! densities use seeded Monte Carlo with common random numbers across `rho`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::capacity_solver::{Boundary, PerStateCapacities};
use crate::channel_model::JointStatePmf;
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::quadrature::GaussLegendre;

/// Allowed deviation of the total probability mass from one.
pub const MASS_TOL: f64 = 1e-4;
/// Exponent of the endpoint grading `u = 1 - (1 - s)^k` used near the
/// infinite-SNR end of each mapped axis.
const GRADING: i32 = 3;
/// Monte Carlo samples are reduced in chunks of this size.
const MC_CHUNK: usize = 1 << 14;

/// Piecewise-constant joint density on a rectangular grid of SNR cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridDensity {
    /// Cell edges on the first-hop SNR axis (linear scale), increasing.
    pub snr1_edges: Vec<f64>,
    pub snr2_edges: Vec<f64>,
    /// `density[i][j]` on cell `[snr1_edges[i], snr1_edges[i+1]) x [...]`.
    pub density: Vec<Vec<f64>>,
}

impl GridDensity {
    fn cell_masses(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.density.len() * self.snr2_edges.len());
        for (i, row) in self.density.iter().enumerate() {
            let w1 = self.snr1_edges[i + 1] - self.snr1_edges[i];
            for (j, f) in row.iter().enumerate() {
                let w2 = self.snr2_edges[j + 1] - self.snr2_edges[j];
                out.push(f * w1 * w2);
            }
        }
        out
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Fading(format!("grid density: {m}")));
        for (name, e) in [("snr1_edges", &self.snr1_edges), ("snr2_edges", &self.snr2_edges)] {
            if e.len() < 2 {
                return bad(&format!("{name} needs at least two edges"));
            }
            if e[0] < 0.0 || !e.iter().all(|v| v.is_finite()) || e.windows(2).any(|w| w[1] <= w[0]) {
                return bad(&format!("{name} must be finite, >= 0 and strictly increasing"));
            }
        }
        let (n1, n2) = (self.snr1_edges.len() - 1, self.snr2_edges.len() - 1);
        if self.density.len() != n1 || self.density.iter().any(|r| r.len() != n2) {
            return bad(&format!("density must be {n1} x {n2}"));
        }
        if self.density.iter().flatten().any(|f| !(*f >= 0.0 && f.is_finite())) {
            return bad("density entries must be finite and >= 0");
        }
        Ok(())
    }
}

/// Joint law of the two SNRs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FadingModel {
    /// Independent exponential SNRs (Rayleigh amplitudes) with the given means.
    IndependentRayleigh { mean_snr1: f64, mean_snr2: f64 },
    /// Deterministic SNRs; reduces to a fixed channel.
    PointMass { snr1: f64, snr2: f64 },
    /// Tabulated density.
    Grid(GridDensity),
}

impl FadingModel {
    pub fn rayleigh(mean_snr1: f64, mean_snr2: f64) -> Self {
        FadingModel::IndependentRayleigh { mean_snr1, mean_snr2 }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FadingModel::IndependentRayleigh { mean_snr1, mean_snr2 } => {
                if !(*mean_snr1 > 0.0 && mean_snr1.is_finite() && *mean_snr2 > 0.0 && mean_snr2.is_finite()) {
                    return Err(Error::Fading("mean SNRs must be finite and > 0".into()));
                }
            }
            FadingModel::PointMass { snr1, snr2 } => {
                if !(*snr1 >= 0.0 && snr1.is_finite() && *snr2 >= 0.0 && snr2.is_finite()) {
                    return Err(Error::Fading("point-mass SNRs must be finite and >= 0".into()));
                }
            }
            FadingModel::Grid(g) => g.validate()?,
        }
        let mass = self.total_mass(256);
        if let Some(m) = mass {
            if (m - 1.0).abs() > MASS_TOL {
                return Err(Error::Fading(format!("density integrates to {m}, not 1")));
            }
        }
        Ok(())
    }

    /// Joint density `f(g1, g2)`; `None` for the point mass.
    pub fn density(&self, g1: f64, g2: f64) -> Option<f64> {
        if g1 < 0.0 || g2 < 0.0 {
            return Some(0.0);
        }
        match self {
            FadingModel::IndependentRayleigh { mean_snr1: m1, mean_snr2: m2 } => {
                Some((-g1 / m1).exp() / m1 * (-g2 / m2).exp() / m2)
            }
            FadingModel::PointMass { .. } => None,
            FadingModel::Grid(g) => {
                let i = locate(&g.snr1_edges, g1)?;
                let j = locate(&g.snr2_edges, g2)?;
                Some(g.density[i][j])
            }
        }
    }

    /// Total probability mass under the module's integration rule;
    /// `None` for the point mass.
    pub fn total_mass(&self, nodes: usize) -> Option<f64> {
        match self {
            FadingModel::IndependentRayleigh { mean_snr1: m1, mean_snr2: m2 } => {
                // integrate f(g(u)) |dg/du| on the CDF-mapped square
                let gl = GaussLegendre::new(nodes);
                let axis = |m: f64| {
                    graded_integrate(&gl, 0.0, |v| {
                        let g = snr_from_complement(m, v);
                        (-g / m).exp() / m * m / v
                    })
                };
                Some(axis(*m1) * axis(*m2))
            }
            FadingModel::PointMass { .. } => None,
            FadingModel::Grid(g) => Some(g.cell_masses().iter().sum()),
        }
    }

    /// Sampler of SNR pairs (tables are built once here).
    pub fn sampler(&self) -> SnrSampler<'_> {
        match self {
            FadingModel::Grid(g) => SnrSampler::Grid(GridSampler::new(g)),
            m => SnrSampler::Direct(m),
        }
    }
}

pub enum SnrSampler<'a> {
    Direct(&'a FadingModel),
    Grid(GridSampler<'a>),
}

impl SnrSampler<'_> {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> (f64, f64) {
        match self {
            SnrSampler::Grid(g) => g.sample(rng),
            SnrSampler::Direct(FadingModel::IndependentRayleigh { mean_snr1, mean_snr2 }) => {
                let u1: f64 = rng.gen();
                let u2: f64 = rng.gen();
                (-mean_snr1 * (-u1).ln_1p(), -mean_snr2 * (-u2).ln_1p())
            }
            SnrSampler::Direct(FadingModel::PointMass { snr1, snr2 }) => (*snr1, *snr2),
            SnrSampler::Direct(FadingModel::Grid(g)) => GridSampler::new(g).sample(rng),
        }
    }
}

fn locate(edges: &[f64], x: f64) -> Option<usize> {
    if x < edges[0] || x >= *edges.last()? {
        return None;
    }
    Some(edges.partition_point(|e| *e <= x) - 1)
}

pub struct GridSampler<'a> {
    grid: &'a GridDensity,
    cumulative: Vec<f64>,
}

impl<'a> GridSampler<'a> {
    fn new(grid: &'a GridDensity) -> Self {
        let mut acc = 0.0;
        let cumulative = grid
            .cell_masses()
            .into_iter()
            .map(|m| {
                acc += m;
                acc
            })
            .collect();
        Self { grid, cumulative }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> (f64, f64) {
        let total = *self.cumulative.last().expect("non-empty grid");
        let t = rng.gen::<f64>() * total;
        let k = self.cumulative.partition_point(|c| *c <= t).min(self.cumulative.len() - 1);
        let n2 = self.grid.snr2_edges.len() - 1;
        let (i, j) = (k / n2, k % n2);
        let e1 = &self.grid.snr1_edges;
        let e2 = &self.grid.snr2_edges;
        let g1 = e1[i] + rng.gen::<f64>() * (e1[i + 1] - e1[i]);
        let g2 = e2[j] + rng.gen::<f64>() * (e2[j + 1] - e2[j]);
        (g1, g2)
    }
}

/// `int_lo^1 f(1 - u) du` with the endpoint grading that tames the
/// `log(-log(1 - u))` growth of Rayleigh rates near `u = 1`. The integrand
/// receives the complement `1 - u`, which is computed without cancellation.
fn graded_integrate<F: Fn(f64) -> f64>(gl: &GaussLegendre, lo: f64, f: F) -> f64 {
    let len = 1.0 - lo;
    if len <= 0.0 {
        return 0.0;
    }
    let k = GRADING as f64;
    let mut s = 0.0;
    for (x, w) in gl.nodes.iter().zip(&gl.weights) {
        let t = 1.0 - x;
        let tk1 = t.powi(GRADING - 1);
        s += w * k * tk1 * f(len * tk1 * t);
    }
    s * len
}

/// Exponential SNR with mean `m` at CDF complement `v = 1 - u`.
fn snr_from_complement(m: f64, v: f64) -> f64 {
    -m * v.ln()
}

fn log2_1p(g: f64) -> f64 {
    g.ln_1p() / std::f64::consts::LN_2
}

/// Integration settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureOptions {
    /// Gauss–Legendre nodes per axis.
    pub nodes: usize,
    /// Monte Carlo sample count.
    pub mc_samples: usize,
    pub seed: u64,
    /// Use Monte Carlo even where tensor quadrature applies.
    pub force_monte_carlo: bool,
    /// Error estimates above this many bits flag the result.
    pub error_threshold: f64,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            nodes: 256,
            mc_samples: 1_000_000,
            seed: 0x5eed,
            force_monte_carlo: false,
            error_threshold: 1e-5,
            exec: Execution::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    TensorQuadrature,
    MonteCarlo,
}

/// `C1(rho)`, `C2(rho)` with error information.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatePair {
    pub c1_bits: f64,
    pub c2_bits: f64,
    pub method: Method,
    /// Quadrature: difference to the half-node rule. Monte Carlo: the
    /// larger of the two standard errors.
    pub est_error: f64,
    /// Standard errors of `(c1, c2)` for Monte Carlo.
    pub std_err: Option<(f64, f64)>,
    pub flagged: bool,
}

enum Backend {
    PointMass { a: f64, b: f64 },
    Rayleigh { m1: f64, m2: f64, full: GaussLegendre, half: GaussLegendre },
    /// Per-sample rates `(log2(1+g1), log2(1+g2))`.
    Samples(Vec<(f64, f64)>),
}

/// Reusable evaluator of `(C1(rho), C2(rho))` for one model; Monte Carlo
/// samples are drawn once so every `rho` sees the same draws.
pub struct RateEvaluator {
    backend: Backend,
    opts: QuadratureOptions,
}

impl RateEvaluator {
    pub fn new(model: &FadingModel, opts: QuadratureOptions) -> Result<Self> {
        model.validate()?;
        if opts.nodes < 2 {
            return Err(Error::Fading("need at least 2 quadrature nodes".into()));
        }
        let backend = match model {
            FadingModel::PointMass { snr1, snr2 } => Backend::PointMass {
                a: log2_1p(*snr1),
                b: log2_1p(*snr2),
            },
            FadingModel::IndependentRayleigh { mean_snr1, mean_snr2 } if !opts.force_monte_carlo => {
                Backend::Rayleigh {
                    m1: *mean_snr1,
                    m2: *mean_snr2,
                    full: GaussLegendre::new(opts.nodes),
                    half: GaussLegendre::new(opts.nodes / 2),
                }
            }
            _ => {
                if opts.mc_samples < 2 {
                    return Err(Error::Fading("need at least 2 Monte Carlo samples".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                let sampler = model.sampler();
                Backend::Samples(
                    (0..opts.mc_samples)
                        .map(|_| {
                            let (g1, g2) = sampler.sample(&mut rng);
                            (log2_1p(g1), log2_1p(g2))
                        })
                        .collect(),
                )
            }
        };
        Ok(Self { backend, opts })
    }

    pub fn method(&self) -> Method {
        match self.backend {
            Backend::PointMass { .. } => Method::Exact,
            Backend::Rayleigh { .. } => Method::TensorQuadrature,
            Backend::Samples(_) => Method::MonteCarlo,
        }
    }

    /// Rates at threshold `rho`; `rho = 0` and `rho = inf` give the
    /// one-hop-only limits.
    pub fn eval(&self, rho: f64) -> RatePair {
        assert!(rho >= 0.0, "threshold must be >= 0");
        match &self.backend {
            Backend::PointMass { a, b } => {
                let relay = *b > rho * a;
                RatePair {
                    c1_bits: if relay { 0.0 } else { *a },
                    c2_bits: if relay { *b } else { 0.0 },
                    method: Method::Exact,
                    est_error: 0.0,
                    std_err: None,
                    flagged: false,
                }
            }
            Backend::Rayleigh { m1, m2, full, half } => {
                let (c1, c2) = rayleigh_rates(*m1, *m2, rho, full, self.opts.exec);
                let (h1, h2) = rayleigh_rates(*m1, *m2, rho, half, self.opts.exec);
                let est = (c1 - h1).abs().max((c2 - h2).abs());
                RatePair {
                    c1_bits: c1,
                    c2_bits: c2,
                    method: Method::TensorQuadrature,
                    est_error: est,
                    std_err: None,
                    flagged: est > self.opts.error_threshold,
                }
            }
            Backend::Samples(s) => {
                let chunks = s.len().div_ceil(MC_CHUNK);
                let partial = par::map_range(self.opts.exec, chunks, |c| {
                    let mut acc = [0.0f64; 4];
                    for &(a, b) in &s[c * MC_CHUNK..((c + 1) * MC_CHUNK).min(s.len())] {
                        let (x1, x2) = if b > rho * a { (0.0, b) } else { (a, 0.0) };
                        acc[0] += x1;
                        acc[1] += x1 * x1;
                        acc[2] += x2;
                        acc[3] += x2 * x2;
                    }
                    acc
                });
                let mut tot = [0.0f64; 4];
                for p in &partial {
                    for (t, v) in tot.iter_mut().zip(p) {
                        *t += v;
                    }
                }
                let n = s.len() as f64;
                let (c1, c2) = (tot[0] / n, tot[2] / n);
                let se = |sum2: f64, mean: f64| ((sum2 / n - mean * mean).max(0.0) / (n - 1.0)).sqrt();
                let (e1, e2) = (se(tot[1], c1), se(tot[3], c2));
                RatePair {
                    c1_bits: c1,
                    c2_bits: c2,
                    method: Method::MonteCarlo,
                    est_error: e1.max(e2),
                    std_err: Some((e1, e2)),
                    flagged: e1.max(e2) > self.opts.error_threshold,
                }
            }
        }
    }

    /// `(E[log2(1+g1)], E[log2(1+g2)])`.
    pub fn mean_rates(&self) -> (f64, f64) {
        (self.eval(f64::INFINITY).c1_bits, self.eval(0.0).c2_bits)
    }
}

/// Tensor quadrature of both rates on the CDF-mapped unit square. For each
/// outer node the region boundary is located on the inner axis, so each
/// inner integral runs over a smooth piece only.
fn rayleigh_rates(m1: f64, m2: f64, rho: f64, gl: &GaussLegendre, exec: Execution) -> (f64, f64) {
    let k = GRADING as f64;
    let per_node = par::map_range(exec, gl.len(), |i| {
        let t = 1.0 - gl.nodes[i];
        let tk1 = t.powi(GRADING - 1);
        let w = gl.weights[i] * k * tk1;
        let g1 = snr_from_complement(m1, tk1 * t);
        let a = log2_1p(g1);
        // relay region on the mapped inner axis is (u_star, 1]
        let u_star = if rho.is_infinite() {
            if a > 0.0 { 1.0 } else { 0.0 }
        } else {
            let boundary = (rho * a * std::f64::consts::LN_2).exp_m1();
            -(-boundary / m2).exp_m1()
        };
        let c1 = w * a * u_star;
        let c2 = w * graded_integrate(gl, u_star, |v| log2_1p(snr_from_complement(m2, v)));
        (c1, c2)
    });
    let mut c1 = 0.0;
    let mut c2 = 0.0;
    for (x, y) in per_node {
        c1 += x;
        c2 += y;
    }
    (c1, c2)
}

/// `(C1(rho), C2(rho))` for a model.
pub fn rate_pair(rho: f64, model: &FadingModel, opts: QuadratureOptions) -> Result<RatePair> {
    if !(rho >= 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be >= 0, got {rho}")));
    }
    Ok(RateEvaluator::new(model, opts)?.eval(rho))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FadingDiagnostics {
    pub method: Method,
    pub nodes: usize,
    pub mc_samples: usize,
    /// Largest error estimate seen at the reported threshold.
    pub est_error: f64,
    pub std_err: Option<(f64, f64)>,
    pub bisection_steps: usize,
    /// Error estimate above threshold.
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FadingCapacityReport {
    pub rho_opt: f64,
    pub c1_bits: f64,
    pub c2_bits: f64,
    pub capacity_bits: f64,
    /// Present when `C1 - C2` jumps across zero (a probability atom on the
    /// decision boundary); the two sides are time-shared and this is the
    /// probability of handing the tied block to the relay.
    pub coin_prob: Option<f64>,
    /// Set when no sign change was found and the answer is a boundary value.
    pub boundary: Option<Boundary>,
    pub diagnostics: FadingDiagnostics,
}

const BRACKET_LO: f64 = 1.0 / 64.0;
const BRACKET_HI: f64 = 64.0;
const MAX_DOUBLINGS: usize = 60;
const MAX_BISECTIONS: usize = 200;

/// Threshold that balances `C1` and `C2`, found by bisection on
/// `g(rho) = C1(rho) - C2(rho)` in log-scale; stops at
/// `|C1 - C2| <= tol * max(C1, C2)`.
pub fn solve_rho(model: &FadingModel, tol: f64, opts: QuadratureOptions) -> Result<FadingCapacityReport> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be > 0, got {tol}")));
    }
    let ev = RateEvaluator::new(model, opts)?;
    let (e1, e2) = ev.mean_rates();
    if !(e1 > 0.0 && e2 > 0.0) {
        return Err(Error::Fading(format!(
            "both hops need positive mean rate (got {e1}, {e2})"
        )));
    }
    let g = |r: &RatePair| r.c1_bits - r.c2_bits;
    let balanced = |r: &RatePair| (r.c1_bits - r.c2_bits).abs() <= tol * r.c1_bits.max(r.c2_bits);

    let diag = |r: &RatePair, steps: usize| FadingDiagnostics {
        method: r.method,
        nodes: opts.nodes,
        mc_samples: if r.method == Method::MonteCarlo { opts.mc_samples } else { 0 },
        est_error: r.est_error,
        std_err: r.std_err,
        bisection_steps: steps,
        flagged: r.flagged,
    };
    let finish = |rho: f64, r: RatePair, steps: usize, boundary: Option<Boundary>| FadingCapacityReport {
        rho_opt: rho,
        c1_bits: r.c1_bits,
        c2_bits: r.c2_bits,
        capacity_bits: r.c1_bits,
        coin_prob: None,
        boundary,
        diagnostics: diag(&r, steps),
    };

    let mut lo = BRACKET_LO;
    let mut hi = BRACKET_HI;
    let mut r_lo = ev.eval(lo);
    let mut r_hi = ev.eval(hi);
    let mut n = 0;
    while g(&r_lo) > 0.0 {
        if n == MAX_DOUBLINGS {
            return Ok(finish(lo, r_lo, 0, Some(Boundary::Zero)));
        }
        hi = lo;
        r_hi = r_lo;
        lo /= 2.0;
        r_lo = ev.eval(lo);
        n += 1;
    }
    n = 0;
    while g(&r_hi) < 0.0 {
        if n == MAX_DOUBLINGS {
            return Ok(finish(hi, r_hi, 0, Some(Boundary::Infinity)));
        }
        lo = hi;
        r_lo = r_hi;
        hi *= 2.0;
        r_hi = ev.eval(hi);
        n += 1;
    }
    if balanced(&r_lo) {
        return Ok(finish(lo, r_lo, 0, None));
    }
    if balanced(&r_hi) {
        return Ok(finish(hi, r_hi, 0, None));
    }

    let mut steps = 0;
    while steps < MAX_BISECTIONS && hi / lo - 1.0 > 1e-15 {
        let mid = (lo * hi).sqrt();
        let r = ev.eval(mid);
        steps += 1;
        if balanced(&r) {
            return Ok(finish(mid, r, steps, None));
        }
        if g(&r) < 0.0 {
            lo = mid;
            r_lo = r;
        } else {
            hi = mid;
            r_hi = r;
        }
    }

    // C1 - C2 jumps across zero between lo and hi: time-share both sides.
    let (g_lo, g_hi) = (g(&r_lo), g(&r_hi));
    let theta = -g_lo / (g_hi - g_lo);
    let c1 = (1.0 - theta) * r_lo.c1_bits + theta * r_hi.c1_bits;
    let c2 = (1.0 - theta) * r_lo.c2_bits + theta * r_hi.c2_bits;
    let worst = if r_lo.est_error > r_hi.est_error { r_lo } else { r_hi };
    Ok(FadingCapacityReport {
        rho_opt: (lo * hi).sqrt(),
        c1_bits: c1,
        c2_bits: c2,
        capacity_bits: c1,
        coin_prob: Some(1.0 - theta),
        boundary: None,
        diagnostics: diag(&worst, steps),
    })
}

/// Quantizes independent Rayleigh fading onto `m` equiprobable SNR bins per
/// hop. Each bin's capacity is the bin average of `log2(1 + g)`, so the
/// discrete channel has the same mean rates as the continuous one.
pub fn discretize_rayleigh(
    mean_snr1: f64,
    mean_snr2: f64,
    m: usize,
) -> Result<(PerStateCapacities, JointStatePmf)> {
    FadingModel::rayleigh(mean_snr1, mean_snr2).validate()?;
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one bin".into()));
    }
    let gl = GaussLegendre::new(32);
    let bins = |mean: f64| -> Vec<f64> {
        (0..m)
            .map(|i| {
                let lo = i as f64 / m as f64;
                let hi = (i + 1) as f64 / m as f64;
                let integral = if i + 1 == m {
                    graded_integrate(&gl, lo, |v| log2_1p(snr_from_complement(mean, v)))
                } else {
                    gl.integrate(lo, hi, |u| log2_1p(-mean * (-u).ln_1p()))
                };
                integral * m as f64
            })
            .collect()
    };
    let caps = PerStateCapacities::from_rates(bins(mean_snr1), bins(mean_snr2))?;
    let p = vec![1.0 / m as f64; m];
    Ok((caps, JointStatePmf::independent(&p, &p)))
}
