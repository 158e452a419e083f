//! Built-in channel instances with known answers, and the random specs
//! used by the oracle check.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use relaycap::{JointStatePmf, PerStateCapacities, RelayChannelSpec, StateChannel, StateSpace, Threshold};

/// Closed-form optimum of an instance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClosedForm {
    pub rho: Threshold,
    pub coin_prob: f64,
    pub capacity: f64,
}

/// Single-state channel with source–relay capacity `a` and relay–destination
/// capacity `b`: the relay gets a fraction `a / (a + b)` of the blocks.
pub fn fixed_closed_form(a: f64, b: f64) -> ClosedForm {
    ClosedForm {
        rho: Threshold::Finite(b / a),
        coin_prob: a / (a + b),
        capacity: a * b / (a + b),
    }
}

pub fn fixed_instance(a: f64, b: f64) -> (PerStateCapacities, JointStatePmf) {
    (
        PerStateCapacities::from_rates(vec![a], vec![b]).expect("rates checked by caller"),
        JointStatePmf::new(vec![vec![1.0]]),
    )
}

/// Which hop limits an ON-OFF instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OnOffCase {
    /// `p(s2 on) B < p(s1 on, s2 off) A`: the relay is the bottleneck and
    /// transmits whenever it is on (`rho = 0`).
    RelayBottleneck,
    /// `p(s1 on) A < p(s1 off, s2 on) B`: the source is the bottleneck
    /// (`rho = inf`).
    SourceBottleneck,
    /// Neither: `rho = B / A`.
    Balanced,
}

impl OnOffCase {
    pub fn number(self) -> u8 {
        match self {
            OnOffCase::RelayBottleneck => 1,
            OnOffCase::SourceBottleneck => 2,
            OnOffCase::Balanced => 3,
        }
    }
}

/// Two-state ON-OFF channel: state 0 of each hop is OFF (zero capacity),
/// state 1 is ON with capacity `a` (source–relay) or `b` (relay–destination).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OnOff {
    pub a: f64,
    pub b: f64,
    /// `joint[s1][s2]`, index 0 = OFF, 1 = ON.
    pub joint: [[f64; 2]; 2],
}

impl OnOff {
    pub fn classify(&self) -> OnOffCase {
        let [[_, p_off_on], [p_on_off, p_on_on]] = self.joint;
        if (p_off_on + p_on_on) * self.b < p_on_off * self.a {
            OnOffCase::RelayBottleneck
        } else if (p_on_off + p_on_on) * self.a < p_off_on * self.b {
            OnOffCase::SourceBottleneck
        } else {
            OnOffCase::Balanced
        }
    }

    pub fn closed_form(&self) -> ClosedForm {
        let (a, b) = (self.a, self.b);
        let [[p_off_off, p_off_on], [p_on_off, p_on_on]] = self.joint;
        match self.classify() {
            OnOffCase::RelayBottleneck => {
                let c = (p_off_on + p_on_on) * b;
                ClosedForm { rho: Threshold::Finite(0.0), coin_prob: 1.0 - c / (p_on_off * a), capacity: c }
            }
            OnOffCase::SourceBottleneck => {
                let c = (p_on_off + p_on_on) * a;
                ClosedForm { rho: Threshold::Infinite, coin_prob: c / (p_off_on * b), capacity: c }
            }
            OnOffCase::Balanced => ClosedForm {
                rho: Threshold::Finite(b / a),
                coin_prob: ((p_on_off + p_on_on) * a - p_off_on * b) / (p_on_on * (a + b)),
                capacity: a * b / (a + b) * (1.0 - p_off_off),
            },
        }
    }

    pub fn capacities(&self) -> PerStateCapacities {
        PerStateCapacities::from_rates(vec![0.0, self.a], vec![0.0, self.b]).expect("rates checked by caller")
    }

    pub fn joint_pmf(&self) -> JointStatePmf {
        JointStatePmf::new(self.joint.iter().map(|r| r.to_vec()).collect())
    }

    /// Default joint law for a requested case with `A = B`.
    pub fn default_joint(case: Option<u8>) -> [[f64; 2]; 2] {
        match case {
            Some(1) => [[0.3, 0.1], [0.5, 0.1]],
            Some(2) => [[0.3, 0.5], [0.1, 0.1]],
            _ => [[0.25; 2]; 2],
        }
    }
}

/// `e^x E1(x)` for `x > 0`: power series below 1, continued fraction above.
pub fn exp_e1(x: f64) -> f64 {
    assert!(x > 0.0);
    if x <= 1.0 {
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..60 {
            term *= -x / k as f64;
            sum -= term / k as f64;
        }
        x.exp() * (-0.577_215_664_901_532_9 - x.ln() + sum)
    } else {
        // modified Lentz on 1/(x+1-1/(x+3-4/(x+5-...)))
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (an * d + b);
            c = b + an / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h
    }
}

/// Capacity of symmetric independent Rayleigh fading with mean SNR `m` on
/// both hops. By symmetry the optimum is `rho = 1` and
/// `C = E[max(log2(1+g1), log2(1+g2))] / 2`.
pub fn symmetric_rayleigh_capacity(m: f64) -> f64 {
    let c = 1.0 / m;
    (2.0 * exp_e1(c) - exp_e1(2.0 * c)) / std::f64::consts::LN_2 / 2.0
}

fn dirichlet_row(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

fn random_channel(rng: &mut ChaCha8Rng, max_symbols: usize) -> StateChannel {
    let nx = rng.gen_range(2..=max_symbols);
    let ny = rng.gen_range(2..=max_symbols);
    if rng.gen_bool(0.15) {
        // identical rows: a zero-capacity state
        let row = dirichlet_row(rng, ny);
        return StateChannel::new(vec![row; nx]);
    }
    StateChannel::new((0..nx).map(|_| dirichlet_row(rng, ny)).collect())
}

/// Random spec with up to `max_states` states per hop and channels of up
/// to `max_symbols` inputs/outputs.
pub fn random_spec(rng: &mut ChaCha8Rng, max_states: usize, max_symbols: usize) -> RelayChannelSpec {
    let n1 = rng.gen_range(1..=max_states);
    let n2 = rng.gen_range(1..=max_states);
    let flat = dirichlet_row(rng, n1 * n2);
    RelayChannelSpec {
        states: StateSpace::numbered(n1, n2),
        joint_pmf: JointStatePmf::new(flat.chunks(n2).map(<[f64]>::to_vec).collect()),
        sr_channels: (0..n1).map(|_| random_channel(rng, max_symbols)).collect(),
        rd_channels: (0..n2).map(|_| random_channel(rng, max_symbols)).collect(),
    }
}
