//! Mutual information of a discrete memoryless channel and its capacity via
//! Blahut–Arimoto alternating maximization. All quantities are in bits.

use serde::{Deserialize, Serialize};

use crate::channel_model::{StateChannel, PMF_SUM_TOL};
use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// Probability vector over the active input alphabet of one hop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InputDistribution(pub Vec<f64>);

impl InputDistribution {
    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    /// Validating constructor.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidArgument("empty input distribution".into()));
        }
        if probs.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
            return Err(Error::InvalidArgument(
                "input distribution has a negative or non-finite entry".into(),
            ));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > PMF_SUM_TOL {
            return Err(Error::InvalidArgument(format!(
                "input distribution sums to {s}"
            )));
        }
        Ok(Self(probs))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Outcome of a Blahut–Arimoto run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityResult {
    pub capacity_bits: f64,
    pub argmax: InputDistribution,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub iterations: usize,
}

impl CapacityResult {
    pub fn gap(&self) -> f64 {
        self.upper_bound - self.lower_bound
    }
}

fn output_distribution(p: &[f64], ch: &StateChannel) -> Vec<f64> {
    let mut q = vec![0.0; ch.output_size()];
    for (px, row) in p.iter().zip(&ch.transition) {
        for (qy, w) in q.iter_mut().zip(row) {
            *qy += px * w;
        }
    }
    q
}

/// `D(p(.|x) || q)` in bits for one input row.
fn row_divergence(row: &[f64], q: &[f64]) -> f64 {
    let mut d = 0.0;
    for (&w, &qy) in row.iter().zip(q) {
        if w > 0.0 {
            d += w * (w / qy).log2();
        }
    }
    d
}

/// `I(X;Y)` in bits for input law `p_x` over `ch`.
pub fn mutual_information(p_x: &InputDistribution, ch: &StateChannel) -> Result<f64> {
    if p_x.len() != ch.input_size() {
        return Err(Error::DimensionMismatch {
            what: "input distribution length vs channel inputs",
            expected: ch.input_size(),
            got: p_x.len(),
        });
    }
    let q = output_distribution(&p_x.0, ch);
    let mut i = 0.0;
    for (&px, row) in p_x.0.iter().zip(&ch.transition) {
        if px > 0.0 {
            i += px * row_divergence(row, &q);
        }
    }
    // rounding can leave a -1e-17 residue on useless channels
    Ok(i.max(0.0))
}

fn info_unchecked(p: &[f64], ch: &StateChannel) -> f64 {
    let q = output_distribution(p, ch);
    p.iter()
        .zip(&ch.transition)
        .filter(|(px, _)| **px > 0.0)
        .map(|(px, row)| px * row_divergence(row, &q))
        .sum()
}

/// Largest over-relaxation factor tried by the update.
const MAX_STEP: f64 = 1024.0;
/// Floor on `step * (D - Dmax)` so one update never zeroes an input.
const MIN_EXPONENT: f64 = -60.0;

/// Bounds after one evaluation of the current input law.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

/// Step-wise Blahut–Arimoto iteration, exposed so callers can observe the
/// bound sequence.
pub struct BlahutArimoto<'a> {
    ch: &'a StateChannel,
    p: Vec<f64>,
    divergences: Vec<f64>,
    iterations: usize,
    step: f64,
}

impl<'a> BlahutArimoto<'a> {
    pub fn new(ch: &'a StateChannel) -> Self {
        let n = ch.input_size();
        Self {
            ch,
            p: vec![1.0 / n as f64; n],
            divergences: vec![0.0; n],
            iterations: 0,
            step: 2.0,
        }
    }

    /// Evaluates the current input law: the lower bound is its mutual
    /// information, the upper bound is the largest row divergence from
    /// the induced output law.
    pub fn bounds(&mut self) -> Bounds {
        let q = output_distribution(&self.p, self.ch);
        let mut lower = 0.0;
        let mut upper = f64::NEG_INFINITY;
        for ((d, &px), row) in self.divergences.iter_mut().zip(&self.p).zip(&self.ch.transition) {
            *d = row_divergence(row, &q);
            if px > 0.0 {
                lower += px * *d;
            }
            upper = upper.max(*d);
        }
        Bounds {
            lower: lower.max(0.0),
            upper: upper.max(0.0),
        }
    }

    /// Multiplicative update `p(x) <- p(x) 2^{D_x} / Z` using the
    /// divergences from the last call to [`bounds`](Self::bounds).
    ///
    /// An over-relaxed step `2^{step * D_x}` is tried alongside and kept
    /// only when its mutual information is at least that of the plain step,
    /// so the lower bound stays non-decreasing. The factor doubles on
    /// success and halves on failure.
    pub fn update(&mut self) {
        let plain = self.reweighted(1.0);
        if self.step > 1.0 {
            let fast = self.reweighted(self.step);
            if info_unchecked(&fast, self.ch) >= info_unchecked(&plain, self.ch) {
                self.p = fast;
                self.step = (self.step * 2.0).min(MAX_STEP);
                self.iterations += 1;
                return;
            }
            self.step = (self.step / 2.0).max(1.0);
        } else {
            self.step = 2.0;
        }
        self.p = plain;
        self.iterations += 1;
    }

    /// Constrained Newton step on `I(p)` over the inputs with positive mass,
    /// using the divergences from the last [`bounds`](Self::bounds) call.
    /// Taken only when it strictly raises `I(p)`; returns whether it was
    /// taken. Inputs flagged in `pinned` are never driven to zero.
    pub fn newton_step(&mut self, pinned: &[bool]) -> bool {
        let active: Vec<usize> = (0..self.p.len()).filter(|&x| self.p[x] > 0.0).collect();
        let k = active.len();
        if k < 2 || k > NEWTON_MAX_INPUTS {
            return false;
        }
        let q = output_distribution(&self.p, self.ch);
        // bordered system [H 1; 1' 0] [dp; lambda] = [-g; 0], H in nats
        let m = k + 1;
        let mut a = vec![vec![0.0; m + 1]; m];
        for (i, &x) in active.iter().enumerate() {
            for (j, &z) in active.iter().enumerate().skip(i) {
                let h: f64 = self.ch.transition[x]
                    .iter()
                    .zip(&self.ch.transition[z])
                    .zip(&q)
                    .filter(|(_, &qy)| qy > 0.0)
                    .map(|((wx, wz), qy)| wx * wz / qy)
                    .sum();
                a[i][j] = -h;
                a[j][i] = -h;
            }
            a[i][k] = 1.0;
            a[k][i] = 1.0;
            a[i][m] = -self.divergences[x] * std::f64::consts::LN_2;
        }
        let scale = (0..k).map(|i| a[i][i].abs()).fold(0.0, f64::max);
        for (i, row) in a.iter_mut().enumerate().take(k) {
            row[i] -= NEWTON_RIDGE * scale;
        }
        let Some(dp) = solve_dense(a) else { return false };

        // Longest step keeping masses non-negative. Unpinned inputs that would
        // go negative are dropped at the boundary; pinned ones stay positive.
        let mut t: f64 = 1.0;
        let mut blocking = None;
        for (i, &x) in active.iter().enumerate() {
            if dp[i] < 0.0 {
                let reach = -self.p[x] / dp[i];
                let reach = if pinned[x] { 0.9 * reach } else { reach };
                if reach < t {
                    t = reach;
                    blocking = (!pinned[x]).then_some(i);
                }
            }
        }
        let current = info_unchecked(&self.p, self.ch);
        for _ in 0..8 {
            let mut cand = self.p.clone();
            for (i, &x) in active.iter().enumerate() {
                cand[x] = if blocking == Some(i) { 0.0 } else { (cand[x] + t * dp[i]).max(0.0) };
            }
            normalize(&mut cand);
            if info_unchecked(&cand, self.ch) > current {
                self.p = cand;
                self.iterations += 1;
                return true;
            }
            t *= 0.5;
            blocking = None;
        }
        false
    }

    fn reweighted(&self, step: f64) -> Vec<f64> {
        // shift by the max exponent so 2^{D} cannot overflow
        let dmax = self.divergences.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut p: Vec<f64> = self
            .p
            .iter()
            .zip(&self.divergences)
            .map(|(px, d)| px * (step * (d - dmax)).max(MIN_EXPONENT).exp2())
            .collect();
        let z: f64 = p.iter().sum();
        p.iter_mut().for_each(|px| *px /= z);
        p
    }

    /// Row divergences from the last [`bounds`](Self::bounds) call.
    pub fn divergences(&self) -> &[f64] {
        &self.divergences
    }

    pub fn input(&self) -> &[f64] {
        &self.p
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }
}

/// Updates between attempts to drop an input from the support.
const PRUNE_EVERY: usize = 256;
/// Plain updates before Newton steps are tried.
const NEWTON_AFTER: usize = 32;
/// Newton steps are skipped above this many active inputs.
const NEWTON_MAX_INPUTS: usize = 64;
/// Relative ridge on the Hessian; keeps duplicate rows solvable.
const NEWTON_RIDGE: f64 = 1e-12;

/// Capacity `max_p I(X;Y)` of `ch`. Stops once the bound gap is at most
/// `tol` or after `max_iter` updates; non-convergence shows up as a gap
/// wider than `tol`.
///
/// Inputs outside the optimal support lose mass only like `1/t`. Every
/// [`PRUNE_EVERY`] updates the input with the smallest divergence is set to
/// zero if that divergence is below the lower bound by more than the
/// current gap and its mass is still shrinking. The bounds always range
/// over every input, so a wrong guess cannot produce a false certificate;
/// a dropped input whose divergence exceeds that of every remaining input
/// by more than `tol` is put back and never dropped again.
pub fn blahut_arimoto(ch: &StateChannel, tol: f64, max_iter: usize) -> CapacityResult {
    assert!(tol > 0.0, "tolerance must be positive");
    let n = ch.input_size();
    let mut ba = BlahutArimoto::new(ch);
    let mut b = ba.bounds();
    let mut pinned = vec![false; n];
    let mut snapshot = ba.p.clone();
    let mut newton_at = NEWTON_AFTER;
    let mut newton_wait = 1;
    while b.upper - b.lower > tol && ba.iterations() < max_iter {
        let active_upper = (0..n).filter(|&x| ba.p[x] > 0.0).map(|x| ba.divergences[x]).fold(0.0, f64::max);
        let revive: Vec<usize> =
            (0..n).filter(|&x| ba.p[x] == 0.0 && ba.divergences[x] > active_upper + tol).collect();
        if !revive.is_empty() {
            for x in revive {
                ba.p[x] = 1.0 / n as f64;
                pinned[x] = true;
            }
            normalize(&mut ba.p);
        } else if ba.iterations() > 0 && ba.iterations() % PRUNE_EVERY == 0 {
            let weakest = (0..n)
                .filter(|&x| ba.p[x] > 0.0 && !pinned[x])
                .min_by(|&x, &y| ba.divergences[x].total_cmp(&ba.divergences[y]));
            let active = ba.p.iter().filter(|&&px| px > 0.0).count();
            let margin = b.upper - b.lower;
            if let Some(x) = weakest {
                if active > 1 && ba.divergences[x] < b.lower - margin && ba.p[x] < snapshot[x] {
                    ba.p[x] = 0.0;
                    normalize(&mut ba.p);
                    // bounds must describe the law that `update` reweights
                    ba.bounds();
                }
            }
            snapshot.clone_from(&ba.p);
        }
        let newton = ba.iterations() >= newton_at && ba.newton_step(&pinned);
        if !newton {
            if ba.iterations() >= newton_at {
                newton_wait = (newton_wait * 2).min(PRUNE_EVERY);
                newton_at = ba.iterations() + newton_wait;
            }
            ba.update();
        } else {
            newton_wait = 1;
        }
        b = ba.bounds();
    }
    CapacityResult {
        capacity_bits: b.lower,
        argmax: InputDistribution(ba.input().to_vec()),
        lower_bound: b.lower,
        upper_bound: b.upper,
        iterations: ba.iterations(),
    }
}

/// Gaussian elimination with partial pivoting on an augmented matrix.
fn solve_dense(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let n = a.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if !(a[piv][c].abs() > 0.0) {
            return None;
        }
        a.swap(c, piv);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            if f != 0.0 {
                for k in c..=n {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (a[r][n] - s) / a[r][r];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn normalize(p: &mut [f64]) {
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn h2(p: f64) -> f64 {
        if p <= 0.0 || p >= 1.0 {
            0.0
        } else {
            -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
        }
    }

    #[test]
    fn identity_channel_carries_one_bit() {
        let i = mutual_information(&InputDistribution::uniform(2), &StateChannel::identity(2)).unwrap();
        assert_eq!(i, 1.0);
    }

    #[test]
    fn identical_rows_carry_nothing() {
        let ch = StateChannel::new(vec![vec![0.2, 0.3, 0.5]; 3]);
        let i = mutual_information(&InputDistribution::new(vec![0.1, 0.6, 0.3]).unwrap(), &ch).unwrap();
        assert_eq!(i, 0.0);
    }

    #[test]
    fn bsc_uniform_input() {
        // 1 - H2(0.11), evaluated independently
        let expected = 0.500084041835472;
        let i = mutual_information(&InputDistribution::uniform(2), &StateChannel::bsc(0.11)).unwrap();
        assert!((i - expected).abs() < 1e-12);
        assert!((expected - (1.0 - h2(0.11))).abs() < 1e-14);
    }

    #[test]
    fn dimension_mismatch() {
        let r = mutual_information(&InputDistribution::uniform(3), &StateChannel::bsc(0.1));
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn ba_closed_forms() {
        let r = blahut_arimoto(&StateChannel::identity(2), DEFAULT_TOL, DEFAULT_MAX_ITER);
        assert!((r.capacity_bits - 1.0).abs() < 1e-12);
        assert_eq!(r.argmax.0, vec![0.5, 0.5]);

        let r = blahut_arimoto(&StateChannel::bsc(0.11), DEFAULT_TOL, DEFAULT_MAX_ITER);
        assert!((r.capacity_bits - 0.500084041835472).abs() < 1e-10);
        assert!((r.argmax.0[0] - 0.5).abs() < 1e-12);

        let r = blahut_arimoto(&StateChannel::bec(0.3), DEFAULT_TOL, DEFAULT_MAX_ITER);
        assert!((r.capacity_bits - 0.7).abs() < 1e-10);
        assert!(r.lower_bound <= r.capacity_bits && r.capacity_bits <= r.upper_bound);
    }

    #[test]
    fn ba_asymmetric_channel_converges() {
        // Z-channel with p = 0.5: C = log2(1 + (1-p) p^{p/(1-p)}) = log2(1.25)
        let ch = StateChannel::new(vec![vec![1.0, 0.0], vec![0.5, 0.5]]);
        let r = blahut_arimoto(&ch, DEFAULT_TOL, DEFAULT_MAX_ITER);
        assert!(r.gap() <= DEFAULT_TOL);
        assert!((r.capacity_bits - 1.25f64.log2()).abs() < 1e-9);
        // optimal P(x=1) = 2/5
        assert!((r.argmax.0[1] - 0.4).abs() < 1e-4);
    }

    #[test]
    fn ba_drops_dominated_input() {
        // input 0 is nearly a mix of the others and carries no mass at the
        // optimum; plain iterations stall around a 5e-7 gap at 10^4 updates
        let ch = StateChannel::new(vec![
            vec![0.5405966579774572, 0.3367980042048893, 0.1226053378176537],
            vec![0.5949122999011089, 0.2792351555140328, 0.1258525445848583],
            vec![0.16769236709053706, 0.17697788280589444, 0.6553297501035684],
        ]);
        let r = blahut_arimoto(&ch, DEFAULT_TOL, DEFAULT_MAX_ITER);
        assert!(r.gap() <= DEFAULT_TOL, "gap {}", r.gap());
        assert!(r.iterations < 1000);
        assert_eq!(r.argmax.0[0], 0.0);
        let i = mutual_information(&r.argmax, &ch).unwrap();
        assert!((i - r.lower_bound).abs() < 1e-15);
    }

    #[test]
    fn ba_large_alphabet() {
        // 48x48 rows from a fixed LCG; many inputs end with zero mass
        let mut state = 12345u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let rows = (0..48)
            .map(|_| {
                let r: Vec<f64> = (0..48).map(|_| next()).collect();
                let s: f64 = r.iter().sum();
                r.into_iter().map(|v| v / s).collect()
            })
            .collect();
        let r = blahut_arimoto(&StateChannel::new(rows), DEFAULT_TOL, DEFAULT_MAX_ITER);
        assert!(r.gap() <= DEFAULT_TOL, "gap {} after {}", r.gap(), r.iterations);
    }

    #[test]
    fn ba_reports_gap_when_capped() {
        let ch = StateChannel::new(vec![vec![1.0, 0.0], vec![0.5, 0.5]]);
        let r = blahut_arimoto(&ch, 1e-15, 2);
        assert_eq!(r.iterations, 2);
        assert!(r.gap() > 1e-15);
    }

    fn channel_strategy() -> impl Strategy<Value = StateChannel> {
        (2usize..5, 2usize..5).prop_flat_map(|(nx, ny)| {
            proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, ny), nx).prop_map(
                |rows| {
                    StateChannel::new(
                        rows.into_iter()
                            .map(|r| {
                                let r: Vec<f64> = r.into_iter().map(|v| v + 1e-3).collect();
                                let s: f64 = r.iter().sum();
                                r.into_iter().map(|v| v / s).collect()
                            })
                            .collect(),
                    )
                },
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn bounds_sandwich_and_monotone(ch in channel_strategy()) {
            let mut ba = BlahutArimoto::new(&ch);
            let mut prev = f64::NEG_INFINITY;
            for _ in 0..200 {
                let b = ba.bounds();
                prop_assert!(b.lower <= b.upper + 1e-12);
                prop_assert!(b.lower >= prev - 1e-12);
                prev = b.lower;
                ba.update();
            }
        }

        #[test]
        fn argmax_beats_random_inputs(ch in channel_strategy(), seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let r = blahut_arimoto(&ch, DEFAULT_TOL, DEFAULT_MAX_ITER);
            prop_assert!(InputDistribution::new(r.argmax.0.clone()).is_ok());
            let best = mutual_information(&r.argmax, &ch).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..100 {
                let raw: Vec<f64> = (0..ch.input_size()).map(|_| rng.gen::<f64>()).collect();
                let s: f64 = raw.iter().sum();
                let u = InputDistribution(raw.into_iter().map(|v| v / s).collect());
                prop_assert!(best >= mutual_information(&u, &ch).unwrap() - DEFAULT_TOL);
            }
            let bound = (ch.input_size().min(ch.output_size()) as f64).log2();
            prop_assert!(r.capacity_bits <= bound + 1e-12);
        }

        #[test]
        fn deterministic(ch in channel_strategy()) {
            let a = blahut_arimoto(&ch, DEFAULT_TOL, DEFAULT_MAX_ITER);
            let b = blahut_arimoto(&ch, DEFAULT_TOL, DEFAULT_MAX_ITER);
            prop_assert_eq!(a.capacity_bits.to_bits(), b.capacity_bits.to_bits());
            prop_assert_eq!(a.argmax, b.argmax);
        }
    }
}
