//! Capacity of the relay channel by threshold link selection.
//!
//! For a threshold `rho`, the relay transmits in state pair `(s1, s2)` when
//! `b(s2) > rho * a(s1)`, the source transmits when `b(s2) < rho * a(s1)`, and
//! a shared biased coin decides on equality. `C1` is the average rate into
//! the relay's buffer and `C2` the average rate out of it; the capacity is
//! the common value at the unique `(rho, P_C)` that balances them.
//!
//! The candidate thresholds are the finitely many ratios `b/a` plus `0` and
//! `+inf`, so the balancing threshold is located exactly by sweeping them in
//! ascending order; `P_C` then solves a scalar linear equation.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::channel_model::{validate_spec, JointStatePmf, RelayChannelSpec};
use crate::error::{Error, Result};
use crate::mutual_information::{blahut_arimoto, InputDistribution, DEFAULT_MAX_ITER};
use crate::par::{self, Execution};

/// Relative tolerance for declaring `b == rho * a`.
pub const TIE_TOL: f64 = 1e-7;
/// Required `|C1 - C2|` of a solved report.
pub const BALANCE_TOL: f64 = 1e-9;
/// Rounding slack allowed on the linear solve for `P_C` before clamping.
pub const COIN_CLAMP_TOL: f64 = 1e-9;
/// Blahut–Arimoto upper bounds at or below this are reported as exactly zero.
const ZERO_CAPACITY: f64 = 1e-14;

/// Per-state capacities of both hops, `a(s1)` and `b(s2)`, in bits per
/// channel use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerStateCapacities {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Capacity-achieving input law per source–relay state. Empty when the
    /// table was built from raw rates.
    #[serde(default)]
    pub argmax_inputs_sr: Vec<InputDistribution>,
    #[serde(default)]
    pub argmax_inputs_rd: Vec<InputDistribution>,
    /// Widest Blahut–Arimoto bound gap over all states.
    #[serde(default)]
    pub max_gap: f64,
}

impl PerStateCapacities {
    /// Table from known rates (e.g. `log2(1 + snr)` or closed forms).
    pub fn from_rates(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.is_empty() || b.is_empty() {
            return Err(Error::InvalidArgument("empty capacity table".into()));
        }
        if a.iter().chain(&b).any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument(
                "per-state capacities must be finite and >= 0".into(),
            ));
        }
        Ok(Self {
            a,
            b,
            argmax_inputs_sr: Vec::new(),
            argmax_inputs_rd: Vec::new(),
            max_gap: 0.0,
        })
    }

    /// `(sum p a, sum p b)`: the rates each hop would get with every
    /// channel use to itself.
    pub fn full_attention(&self, joint: &JointStatePmf) -> (f64, f64) {
        let mut sa = 0.0;
        let mut sb = 0.0;
        for (i, row) in joint.probs.iter().enumerate() {
            for (j, &p) in row.iter().enumerate() {
                sa += p * self.a[i];
                sb += p * self.b[j];
            }
        }
        (sa, sb)
    }
}

/// Runs Blahut–Arimoto on every per-state channel of both hops.
pub fn per_state_capacities(spec: &RelayChannelSpec, tol: f64) -> Result<PerStateCapacities> {
    per_state_capacities_with(spec, tol, DEFAULT_MAX_ITER, Execution::default())
}

pub fn per_state_capacities_with(
    spec: &RelayChannelSpec,
    tol: f64,
    max_iter: usize,
    exec: Execution,
) -> Result<PerStateCapacities> {
    let violations = validate_spec(spec);
    if !violations.is_empty() {
        return Err(Error::InvalidSpec(violations));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be > 0, got {tol}")));
    }
    let all: Vec<_> = spec.sr_channels.iter().chain(&spec.rd_channels).collect();
    let results = par::map_slice(exec, &all, |ch| blahut_arimoto(ch, tol, max_iter));
    let n1 = spec.sr_channels.len();
    let mut max_gap: f64 = 0.0;
    let mut caps = Vec::with_capacity(results.len());
    let mut args = Vec::with_capacity(results.len());
    for r in results {
        max_gap = max_gap.max(r.gap());
        caps.push(if r.upper_bound <= ZERO_CAPACITY { 0.0 } else { r.capacity_bits });
        args.push(r.argmax);
    }
    let b = caps.split_off(n1);
    let args_rd = args.split_off(n1);
    Ok(PerStateCapacities {
        a: caps,
        b,
        argmax_inputs_sr: args,
        argmax_inputs_rd: args_rd,
        max_gap,
    })
}

/// Threshold `rho` on the extended half-line `[0, +inf]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Threshold {
    Finite(f64),
    Infinite,
}

impl Threshold {
    pub fn as_f64(self) -> f64 {
        match self {
            Threshold::Finite(v) => v,
            Threshold::Infinite => f64::INFINITY,
        }
    }

    pub fn from_f64(v: f64) -> Self {
        if v == f64::INFINITY {
            Threshold::Infinite
        } else {
            Threshold::Finite(v)
        }
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Finite(v) => write!(f, "{v}"),
            Threshold::Infinite => f.write_str("inf"),
        }
    }
}

/// JSON form: `{"tag": "finite", "value": 0.5}` or `{"tag": "inf", "value": null}`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ThresholdRepr {
    tag: String,
    value: Option<f64>,
}

impl Serialize for Threshold {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            Threshold::Finite(v) => ThresholdRepr {
                tag: "finite".into(),
                value: Some(v),
            },
            Threshold::Infinite => ThresholdRepr {
                tag: "inf".into(),
                value: None,
            },
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = ThresholdRepr::deserialize(d)?;
        match (r.tag.as_str(), r.value) {
            ("inf", _) => Ok(Threshold::Infinite),
            ("finite", Some(v)) if v >= 0.0 && v.is_finite() => Ok(Threshold::Finite(v)),
            ("finite", _) => Err(D::Error::custom("finite threshold needs a value >= 0")),
            (t, _) => Err(D::Error::custom(format!("unknown threshold tag \"{t}\""))),
        }
    }
}

/// Link decision for one state pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    /// `d = 0`: the source transmits, the relay listens.
    Source,
    /// `d = 1`: the relay transmits from its buffer.
    Relay,
    /// Decided by the shared coin: relay with probability `P_C`.
    Coin,
    /// Both hops have zero capacity; executed as `Source`.
    Irrelevant,
}

impl Decision {
    /// The `d` value executed for a deterministic decision; `None` for `Coin`.
    pub fn d(self) -> Option<u8> {
        match self {
            Decision::Source | Decision::Irrelevant => Some(0),
            Decision::Relay => Some(1),
            Decision::Coin => None,
        }
    }
}

/// Decision table over `S1 x S2` plus the shared coin probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSelectionPolicy {
    pub decision: Vec<Vec<Decision>>,
    pub coin_prob: Option<f64>,
}

impl LinkSelectionPolicy {
    pub fn constant(n1: usize, n2: usize, d: Decision) -> Self {
        Self {
            decision: vec![vec![d; n2]; n1],
            coin_prob: None,
        }
    }

    pub fn has_coin(&self) -> bool {
        self.decision.iter().flatten().any(|d| *d == Decision::Coin)
    }

    /// Executed `d` table with coin pairs left as `None`.
    pub fn d_table(&self) -> Vec<Vec<Option<u8>>> {
        self.decision
            .iter()
            .map(|r| r.iter().map(|d| d.d()).collect())
            .collect()
    }

    #[inline]
    pub fn get(&self, s1: usize, s2: usize) -> Decision {
        self.decision[s1][s2]
    }
}

fn is_tie(a: f64, b: f64, rho: f64) -> bool {
    (b - rho * a).abs() <= TIE_TOL * b.max(1.0)
}

/// Decision for one pair under threshold `rho`.
pub fn decide(a: f64, b: f64, rho: Threshold) -> Decision {
    if a == 0.0 && b == 0.0 {
        return Decision::Irrelevant;
    }
    match rho {
        Threshold::Infinite => {
            if a > 0.0 {
                Decision::Source
            } else {
                Decision::Coin
            }
        }
        Threshold::Finite(r) => {
            if is_tie(a, b, r) {
                Decision::Coin
            } else if b > r * a {
                Decision::Relay
            } else {
                Decision::Source
            }
        }
    }
}

/// Decision table for a fixed threshold; the coin probability is left unset.
pub fn policy_from_rho(caps: &PerStateCapacities, rho: Threshold) -> LinkSelectionPolicy {
    LinkSelectionPolicy {
        decision: caps
            .a
            .iter()
            .map(|&a| caps.b.iter().map(|&b| decide(a, b, rho)).collect())
            .collect(),
        coin_prob: None,
    }
}

/// Average buffer input and output rates `(C1, C2)` of a policy.
pub fn evaluate_policy(
    caps: &PerStateCapacities,
    joint: &JointStatePmf,
    policy: &LinkSelectionPolicy,
) -> Result<(f64, f64)> {
    let (n1, n2) = (caps.a.len(), caps.b.len());
    if joint.n1() != n1 || joint.n2() != n2 {
        return Err(Error::DimensionMismatch {
            what: "joint pmf vs capacity table",
            expected: n1 * n2,
            got: joint.n1() * joint.n2(),
        });
    }
    if policy.decision.len() != n1 || policy.decision.iter().any(|r| r.len() != n2) {
        return Err(Error::DimensionMismatch {
            what: "policy table vs capacity table",
            expected: n1 * n2,
            got: policy.decision.iter().map(Vec::len).sum(),
        });
    }
    let pc = match policy.coin_prob {
        Some(p) => p,
        None if policy.has_coin() => return Err(Error::MissingCoinProbability),
        None => 0.0,
    };
    let mut c1 = 0.0;
    let mut c2 = 0.0;
    for s1 in 0..n1 {
        for s2 in 0..n2 {
            let p = joint.get(s1, s2);
            match policy.get(s1, s2) {
                Decision::Source => c1 += p * caps.a[s1],
                Decision::Relay => c2 += p * caps.b[s2],
                Decision::Coin => {
                    c1 += p * (1.0 - pc) * caps.a[s1];
                    c2 += p * pc * caps.b[s2];
                }
                Decision::Irrelevant => {}
            }
        }
    }
    Ok((c1, c2))
}

/// Which end of the threshold range the solution sits on, if any.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// `rho_opt = 0`: the relay–destination hop limits the rate.
    Zero,
    /// `rho_opt = inf`: the source–relay hop limits the rate.
    Infinity,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    /// Set when the optimum sits at `rho = 0` or `rho = inf`.
    pub boundary: Option<Boundary>,
    /// Every per-state capacity is zero.
    pub degenerate: bool,
    /// Number of distinct threshold candidates swept.
    pub candidates: usize,
    /// Widest per-state Blahut–Arimoto gap feeding the sweep.
    pub max_ba_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityReport {
    pub rho_opt: Threshold,
    pub coin_prob_opt: f64,
    pub c1_bits: f64,
    pub c2_bits: f64,
    pub capacity_bits: f64,
    pub policy: LinkSelectionPolicy,
    pub per_state: PerStateCapacities,
    pub diagnostics: SolverDiagnostics,
}

/// Capacity of a channel spec.
pub fn solve_capacity(spec: &RelayChannelSpec) -> Result<CapacityReport> {
    let caps = per_state_capacities(spec, crate::mutual_information::DEFAULT_TOL)?;
    solve_from_capacities(caps, &spec.joint_pmf)
}

struct PairEntry {
    s1: usize,
    s2: usize,
    key: f64,
}

struct Cluster {
    rho: f64,
    members: Vec<usize>,
    mass_a: f64,
    mass_b: f64,
}

/// Capacity from a per-state capacity table and joint state law.
pub fn solve_from_capacities(
    caps: PerStateCapacities,
    joint: &JointStatePmf,
) -> Result<CapacityReport> {
    let (n1, n2) = (caps.a.len(), caps.b.len());
    if joint.n1() != n1 || joint.probs.iter().any(|r| r.len() != n2) {
        return Err(Error::DimensionMismatch {
            what: "joint pmf vs capacity table",
            expected: n1 * n2,
            got: joint.probs.iter().map(Vec::len).sum(),
        });
    }

    let mut pairs = Vec::with_capacity(n1 * n2);
    for s1 in 0..n1 {
        for s2 in 0..n2 {
            let (a, b) = (caps.a[s1], caps.b[s2]);
            if a == 0.0 && b == 0.0 {
                continue;
            }
            let key = if a == 0.0 { f64::INFINITY } else { b / a };
            pairs.push(PairEntry { s1, s2, key });
        }
    }
    // stable: equal keys stay in row-major order
    pairs.sort_by(|x, y| x.key.partial_cmp(&y.key).unwrap_or(Ordering::Equal));

    // Group keys that tie with the first key of their group.
    let mut clusters = vec![Cluster {
        rho: 0.0,
        members: Vec::new(),
        mass_a: 0.0,
        mass_b: 0.0,
    }];
    for (idx, e) in pairs.iter().enumerate() {
        let (a, b) = (caps.a[e.s1], caps.b[e.s2]);
        let cur = clusters.last().expect("non-empty");
        let joins = if e.key.is_infinite() {
            cur.rho.is_infinite()
        } else {
            is_tie(a, b, cur.rho)
        };
        if !joins {
            clusters.push(Cluster {
                rho: e.key,
                members: Vec::new(),
                mass_a: 0.0,
                mass_b: 0.0,
            });
        }
        let p = joint.get(e.s1, e.s2);
        let cur = clusters.last_mut().expect("non-empty");
        cur.members.push(idx);
        cur.mass_a += p * a;
        cur.mass_b += p * b;
    }
    if !clusters.last().expect("non-empty").rho.is_infinite() {
        clusters.push(Cluster {
            rho: f64::INFINITY,
            members: Vec::new(),
            mass_a: 0.0,
            mass_b: 0.0,
        });
    }

    // Cluster k at threshold rho_k: lower clusters go to the source, higher
    // ones to the relay. Find the first k where C1 - C2 with ties given to
    // the source is >= 0; at k = last, C2 is zero so one always exists.
    let m = clusters.len();
    let mut below_a = vec![0.0; m + 1];
    for k in 0..m {
        below_a[k + 1] = below_a[k] + clusters[k].mass_a;
    }
    let mut above_b = vec![0.0; m + 1];
    for k in (0..m).rev() {
        above_b[k] = above_b[k + 1] + clusters[k].mass_b;
    }
    let k = (0..m)
        .find(|&k| below_a[k + 1] - above_b[k + 1] >= 0.0)
        .unwrap_or(m - 1);

    let src_fixed = below_a[k];
    let relay_fixed = above_b[k + 1];
    let tie_a = clusters[k].mass_a;
    let tie_b = clusters[k].mass_b;
    let denom = tie_a + tie_b;
    let coin = if denom > 0.0 {
        let raw = (src_fixed + tie_a - relay_fixed) / denom;
        if !(-COIN_CLAMP_TOL..=1.0 + COIN_CLAMP_TOL).contains(&raw) {
            return Err(Error::CoinOutOfRange {
                value: raw,
                rho: clusters[k].rho,
                tie_c1: tie_a,
                tie_c2: tie_b,
            });
        }
        raw.clamp(0.0, 1.0)
    } else {
        0.0
    };

    let mut decision = vec![vec![Decision::Irrelevant; n2]; n1];
    for (ci, c) in clusters.iter().enumerate() {
        let d = match ci.cmp(&k) {
            Ordering::Less => Decision::Source,
            Ordering::Equal => Decision::Coin,
            Ordering::Greater => Decision::Relay,
        };
        for &idx in &c.members {
            decision[pairs[idx].s1][pairs[idx].s2] = d;
        }
    }
    let policy = LinkSelectionPolicy {
        decision,
        coin_prob: Some(coin),
    };
    let (c1, c2) = evaluate_policy(&caps, joint, &policy)?;

    let rho = Threshold::from_f64(clusters[k].rho);
    let degenerate = pairs.is_empty();
    let boundary = match rho {
        _ if degenerate => None,
        Threshold::Finite(r) if r == 0.0 => Some(Boundary::Zero),
        Threshold::Infinite => Some(Boundary::Infinity),
        _ => None,
    };
    let max_ba_gap = caps.max_gap;
    Ok(CapacityReport {
        rho_opt: rho,
        coin_prob_opt: coin,
        c1_bits: c1,
        c2_bits: c2,
        capacity_bits: c1,
        policy,
        per_state: caps,
        diagnostics: SolverDiagnostics {
            boundary,
            degenerate,
            candidates: m,
            max_ba_gap,
        },
    })
}

/// Independent optimality oracle: maximizes `min(C1, C2)` over arbitrary
/// per-pair randomizations `q(s1, s2)` in `[0, 1]` (probability of handing
/// the pair to the relay), without using thresholds or ratios.
///
/// The objective is the minimum of two affine functions of `q`, so an
/// optimum exists with at most one fractional coordinate. The search
/// enumerates every choice of that coordinate and every 0/1 corner of the
/// others, scans the free coordinate on a grid of `grid_steps` points, and
/// finishes with one exact continuous pass on the best cell.
pub fn brute_force_capacity(
    caps: &PerStateCapacities,
    joint: &JointStatePmf,
    grid_steps: usize,
) -> f64 {
    assert!(grid_steps >= 2, "grid needs at least two points");
    let mut wa = Vec::new();
    let mut wb = Vec::new();
    for (s1, row) in joint.probs.iter().enumerate() {
        for (s2, &p) in row.iter().enumerate() {
            let (a, b) = (caps.a[s1], caps.b[s2]);
            if p > 0.0 && (a > 0.0 || b > 0.0) {
                wa.push(p * a);
                wb.push(p * b);
            }
        }
    }
    let n = wa.len();
    if n == 0 {
        return 0.0;
    }
    assert!(n <= 20, "oracle is exponential in the number of pairs");

    let mut best = 0.0f64;
    let mut best_cell = (0usize, 0u32);
    for free in 0..n {
        for mask in 0..(1u32 << (n - 1)) {
            // base rates with the free coordinate at q = 0
            let mut c1 = wa[free];
            let mut c2 = 0.0;
            let mut bit = 0;
            for i in (0..n).filter(|&i| i != free) {
                if mask >> bit & 1 == 1 {
                    c2 += wb[i];
                } else {
                    c1 += wa[i];
                }
                bit += 1;
            }
            for g in 0..grid_steps {
                let q = g as f64 / (grid_steps - 1) as f64;
                let v = (c1 - q * wa[free]).min(c2 + q * wb[free]);
                if v > best {
                    best = v;
                    best_cell = (free, mask);
                }
            }
        }
    }

    // Exact balance of the free coordinate in the winning cell.
    let (free, mask) = best_cell;
    let mut c1 = wa[free];
    let mut c2 = 0.0;
    let mut bit = 0;
    for i in (0..n).filter(|&i| i != free) {
        if mask >> bit & 1 == 1 {
            c2 += wb[i];
        } else {
            c1 += wa[i];
        }
        bit += 1;
    }
    let denom = wa[free] + wb[free];
    if denom > 0.0 {
        let q = ((c1 - c2) / denom).clamp(0.0, 1.0);
        best = best.max((c1 - q * wa[free]).min(c2 + q * wb[free]));
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel_model::{StateChannel, StateSpace};

    fn caps(a: &[f64], b: &[f64]) -> PerStateCapacities {
        PerStateCapacities::from_rates(a.to_vec(), b.to_vec()).unwrap()
    }

    #[test]
    fn per_state_identity_hops() {
        let spec = RelayChannelSpec::single_state(StateChannel::identity(2), StateChannel::identity(2));
        let c = per_state_capacities(&spec, 1e-10).unwrap();
        assert!((c.a[0] - 1.0).abs() < 1e-12 && (c.b[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn per_state_bsc_bec() {
        let spec = RelayChannelSpec::single_state(StateChannel::bsc(0.11), StateChannel::bec(0.3));
        let c = per_state_capacities(&spec, 1e-10).unwrap();
        assert!((c.a[0] - 0.500084041835472).abs() < 1e-9);
        assert!((c.b[0] - 0.7).abs() < 1e-9);
    }

    #[test]
    fn per_state_zero_capacity_state() {
        let spec = RelayChannelSpec {
            states: StateSpace::numbered(2, 1),
            joint_pmf: JointStatePmf::new(vec![vec![0.5], vec![0.5]]),
            sr_channels: vec![StateChannel::bsc(0.2), StateChannel::new(vec![vec![0.3, 0.7]; 3])],
            rd_channels: vec![StateChannel::identity(2)],
        };
        let c = per_state_capacities(&spec, 1e-10).unwrap();
        assert_eq!(c.a[1], 0.0);
    }

    #[test]
    fn invalid_spec_rejected() {
        let mut spec = RelayChannelSpec::single_state(StateChannel::bsc(0.1), StateChannel::bsc(0.1));
        spec.joint_pmf.probs[0][0] = 0.5;
        assert!(matches!(solve_capacity(&spec), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn policy_examples() {
        assert_eq!(decide(2.0, 1.0, Threshold::Finite(0.5)), Decision::Coin);
        assert_eq!(decide(1.0, 1.0, Threshold::Finite(0.0)), Decision::Relay);
        assert_eq!(decide(0.0, 0.0, Threshold::Finite(3.0)), Decision::Irrelevant);
        assert_eq!(decide(0.0, 0.0, Threshold::Infinite), Decision::Irrelevant);
        assert_eq!(decide(1.0, 5.0, Threshold::Infinite), Decision::Source);
        assert_eq!(decide(0.0, 5.0, Threshold::Infinite), Decision::Coin);
        assert_eq!(decide(1.0, 0.0, Threshold::Finite(0.0)), Decision::Coin);
        assert_eq!(decide(2.0, 1.0, Threshold::Finite(0.4)), Decision::Relay);
        assert_eq!(decide(2.0, 1.0, Threshold::Finite(0.6)), Decision::Source);
    }

    #[test]
    fn evaluate_examples() {
        let c = caps(&[2.0], &[1.0]);
        let j = JointStatePmf::new(vec![vec![1.0]]);
        let mut pol = LinkSelectionPolicy::constant(1, 1, Decision::Coin);
        assert!(matches!(evaluate_policy(&c, &j, &pol), Err(Error::MissingCoinProbability)));
        pol.coin_prob = Some(0.25);
        assert_eq!(evaluate_policy(&c, &j, &pol).unwrap(), (0.75 * 2.0, 0.25));

        let c = caps(&[1.0, 3.0], &[2.0, 0.5]);
        let j = JointStatePmf::new(vec![vec![0.1, 0.2], vec![0.3, 0.4]]);
        let all_src = LinkSelectionPolicy::constant(2, 2, Decision::Source);
        let (c1, c2) = evaluate_policy(&c, &j, &all_src).unwrap();
        assert!((c1 - (0.3 * 1.0 + 0.7 * 3.0)).abs() < 1e-15 && c2 == 0.0);
        let all_relay = LinkSelectionPolicy::constant(2, 2, Decision::Relay);
        let (c1, c2) = evaluate_policy(&c, &j, &all_relay).unwrap();
        assert!(c1 == 0.0 && (c2 - (0.4 * 2.0 + 0.6 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn fixed_channel() {
        let r = solve_from_capacities(caps(&[2.0], &[1.0]), &JointStatePmf::new(vec![vec![1.0]])).unwrap();
        assert_eq!(r.rho_opt, Threshold::Finite(0.5));
        assert!((r.coin_prob_opt - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.capacity_bits - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.policy.decision, vec![vec![Decision::Coin]]);
        assert_eq!(r.diagnostics.boundary, None);
    }

    fn onoff(joint: [[f64; 2]; 2], a: f64, b: f64) -> CapacityReport {
        solve_from_capacities(
            caps(&[0.0, a], &[0.0, b]),
            &JointStatePmf::new(joint.iter().map(|r| r.to_vec()).collect()),
        )
        .unwrap()
    }

    #[test]
    fn onoff_case1_rho_zero() {
        // p(s1[2], s2[1]) = 0.5, p(s2[2]) = 0.2
        let r = onoff([[0.3, 0.1], [0.5, 0.1]], 1.0, 1.0);
        assert!((r.capacity_bits - 0.2).abs() < 1e-12);
        assert_eq!(r.rho_opt, Threshold::Finite(0.0));
        assert_eq!(r.diagnostics.boundary, Some(Boundary::Zero));
        // P_C solves (1 - P_C) * 0.5 = 0.2
        assert!((r.coin_prob_opt - 0.6).abs() < 1e-12);
        assert_eq!(r.policy.get(0, 0), Decision::Irrelevant);
        assert_eq!(r.policy.get(1, 0), Decision::Coin);
        assert_eq!(r.policy.get(0, 1), Decision::Relay);
        assert_eq!(r.policy.get(1, 1), Decision::Relay);
    }

    #[test]
    fn onoff_case2_rho_infinite() {
        // p(s1[2]) = 0.2, p(s1[1], s2[2]) = 0.5
        let r = onoff([[0.3, 0.5], [0.1, 0.1]], 1.0, 1.0);
        assert!((r.capacity_bits - 0.2).abs() < 1e-12);
        assert_eq!(r.rho_opt, Threshold::Infinite);
        assert_eq!(r.diagnostics.boundary, Some(Boundary::Infinity));
        assert!((r.coin_prob_opt - 0.4).abs() < 1e-12);
    }

    #[test]
    fn onoff_case3_uniform() {
        let r = onoff([[0.25, 0.25], [0.25, 0.25]], 1.0, 1.0);
        assert!((r.capacity_bits - 0.375).abs() < 1e-12);
        assert_eq!(r.rho_opt, Threshold::Finite(1.0));
        assert!((r.coin_prob_opt - 0.5).abs() < 1e-12);
    }

    #[test]
    fn all_zero_channel_is_degenerate() {
        let r = solve_from_capacities(caps(&[0.0, 0.0], &[0.0]), &JointStatePmf::new(vec![vec![0.5], vec![0.5]]))
            .unwrap();
        assert_eq!(r.capacity_bits, 0.0);
        assert!(r.diagnostics.degenerate);
        assert!(r.policy.decision.iter().flatten().all(|d| *d == Decision::Irrelevant));
    }

    #[test]
    fn crossing_on_upper_key() {
        // keys 1 and 3; the balance needs a coin on the key-3 pair
        let r = solve_from_capacities(caps(&[1.0], &[1.0, 3.0]), &JointStatePmf::new(vec![vec![0.5, 0.5]])).unwrap();
        assert!((r.c1_bits - r.c2_bits).abs() <= BALANCE_TOL);
        let oracle = brute_force_capacity(&r.per_state, &JointStatePmf::new(vec![vec![0.5, 0.5]]), 2001);
        assert!((oracle - r.capacity_bits).abs() < 1e-12);
    }

    #[test]
    fn oracle_examples() {
        let j = JointStatePmf::new(vec![vec![1.0]]);
        let v = brute_force_capacity(&caps(&[2.0], &[1.0]), &j, 1001);
        assert!((v - 2.0 / 3.0).abs() < 1e-3);
        let v = brute_force_capacity(&caps(&[0.0, 1.0], &[0.0, 1.0]), &JointStatePmf::uniform(2, 2), 1001);
        assert!((v - 0.375).abs() < 1e-3);
        assert_eq!(brute_force_capacity(&caps(&[0.0], &[0.0]), &j, 11), 0.0);
    }

    #[test]
    fn threshold_json() {
        let s = serde_json::to_string(&Threshold::Infinite).unwrap();
        assert_eq!(s, r#"{"tag":"inf","value":null}"#);
        let t: Threshold = serde_json::from_str(r#"{"tag":"finite","value":0.5}"#).unwrap();
        assert_eq!(t, Threshold::Finite(0.5));
        assert!(serde_json::from_str::<Threshold>(r#"{"tag":"finite","value":null}"#).is_err());
    }
}
