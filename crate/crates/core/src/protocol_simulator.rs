//! Rate-level simulation of buffer-aided decode-and-forward relaying.
//!
//! Each block draws a state pair, resolves the link decision (flipping the
//! shared coin on tie pairs), and then either the source fills the relay
//! buffer at `a(s1) - eps` or the relay drains `min(Q, b(s2)) - eps` from it.
//! Ideal capacity-achieving codes are assumed per block, so only the queue
//! arithmetic is simulated.
//!
//! Bits are tracked in fixed-point units of `2^-32` bit so the conservation
//! identity `arrived - delivered = Q(N) - Q(0)` holds exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::capacity_solver::{Decision, LinkSelectionPolicy, PerStateCapacities, TIE_TOL};
use crate::channel_model::JointStatePmf;
use crate::error::{Error, Result};
use crate::fading_awgn::FadingModel;
use crate::par::{self, Execution};

const UNITS_PER_BIT: f64 = 4_294_967_296.0;
/// Tolerance on the stationary law of a Markov state process.
pub const STATIONARY_TOL: f64 = 1e-9;

fn to_units(bits: f64) -> u64 {
    (bits.max(0.0) * UNITS_PER_BIT).round() as u64
}

fn to_bits(units: u64) -> f64 {
    units as f64 / UNITS_PER_BIT
}

/// How state pairs evolve from block to block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StateProcess {
    /// Independent draws from the joint state PMF.
    Iid,
    /// Markov chain over row-major state-pair indices whose stationary law
    /// must be the joint state PMF.
    Markov { transition: Vec<Vec<f64>> },
}

impl Default for StateProcess {
    fn default() -> Self {
        StateProcess::Iid
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub blocks: u64,
    /// Rate back-off in bits per channel use.
    pub epsilon: f64,
    pub seed: u64,
    pub state_process: StateProcess,
    /// Keep every `decimation`-th block in the trace; 0 keeps none.
    pub decimation: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            blocks: 1_000_000,
            epsilon: 0.0,
            seed: 1,
            state_process: StateProcess::Iid,
            decimation: 0,
        }
    }
}

/// State of one recorded block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BlockState {
    /// Dense state indices `(s1, s2)`.
    Discrete(usize, usize),
    /// SNR pair of a fading block.
    Snr(f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub block: u64,
    pub state: BlockState,
    pub d: u8,
    /// Queue after the block, `Q(i)`.
    pub queue_bits: f64,
    pub delivered_bits: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub blocks: u64,
    /// Delivered bits per channel use, averaged over all blocks.
    pub throughput_bits: f64,
    pub arrival_rate: f64,
    pub departure_rate: f64,
    pub final_queue: f64,
    /// Relay blocks where `Q(i-1) < b(s2)` capped the relay's rate.
    pub buffer_limited_blocks: u64,
    pub relay_blocks: u64,
    pub source_blocks: u64,
    pub arrived_units: u64,
    pub delivered_units: u64,
    pub final_queue_units: u64,
    pub samples: Vec<TraceRow>,
}

impl SimTrace {
    /// `arrived - delivered == Q(N) - Q(0)` in exact units.
    pub fn conserves_bits(&self) -> bool {
        self.arrived_units.checked_sub(self.delivered_units) == Some(self.final_queue_units)
    }

    /// `Delta / N`; zero for an empty run.
    pub fn buffer_limited_fraction(&self) -> f64 {
        if self.blocks == 0 {
            0.0
        } else {
            self.buffer_limited_blocks as f64 / self.blocks as f64
        }
    }
}

struct Draw {
    state: BlockState,
    relay: bool,
    arrive: u64,
    capacity: u64,
}

fn run_blocks<F>(cfg: &SimConfig, mut draw: F) -> Result<SimTrace>
where
    F: FnMut(&mut ChaCha8Rng, u64) -> Draw,
{
    if !(cfg.epsilon >= 0.0 && cfg.epsilon.is_finite()) {
        return Err(Error::Simulation(format!("epsilon must be finite and >= 0, got {}", cfg.epsilon)));
    }
    let eps = to_units(cfg.epsilon);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut q: u64 = 0;
    let mut arrived: u64 = 0;
    let mut delivered: u64 = 0;
    let mut limited = 0;
    let mut relay_blocks = 0;
    let mut samples = Vec::new();
    let overflow = || Error::Simulation("bit counter overflow".into());

    for i in 0..cfg.blocks {
        let dr = draw(&mut rng, i);
        let mut out = 0;
        if dr.relay {
            relay_blocks += 1;
            if q < dr.capacity {
                limited += 1;
            }
            out = q.min(dr.capacity).saturating_sub(eps);
            // out <= q, so the queue never goes negative
            q -= out;
            delivered = delivered.checked_add(out).ok_or_else(overflow)?;
        } else {
            let inc = dr.arrive.saturating_sub(eps);
            q = q.checked_add(inc).ok_or_else(overflow)?;
            arrived = arrived.checked_add(inc).ok_or_else(overflow)?;
        }
        if cfg.decimation > 0 && i % cfg.decimation == 0 {
            samples.push(TraceRow {
                block: i,
                state: dr.state,
                d: dr.relay as u8,
                queue_bits: to_bits(q),
                delivered_bits: to_bits(out),
            });
        }
    }

    let n = cfg.blocks.max(1) as f64;
    let trace = SimTrace {
        blocks: cfg.blocks,
        throughput_bits: if cfg.blocks == 0 { 0.0 } else { to_bits(delivered) / n },
        arrival_rate: if cfg.blocks == 0 { 0.0 } else { to_bits(arrived) / n },
        departure_rate: if cfg.blocks == 0 { 0.0 } else { to_bits(delivered) / n },
        final_queue: to_bits(q),
        buffer_limited_blocks: limited,
        relay_blocks,
        source_blocks: cfg.blocks - relay_blocks,
        arrived_units: arrived,
        delivered_units: delivered,
        final_queue_units: q,
        samples,
    };
    debug_assert!(trace.conserves_bits());
    Ok(trace)
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

fn pick(cum: &[f64], u: f64) -> usize {
    let t = u * cum.last().copied().unwrap_or(1.0);
    cum.partition_point(|c| *c <= t).min(cum.len() - 1)
}

/// Draws row-major state-pair indices.
enum StateSampler {
    Iid(Vec<f64>),
    Markov { rows: Vec<Vec<f64>>, current: Option<usize>, initial: Vec<f64> },
}

impl StateSampler {
    fn new(joint: &JointStatePmf, process: &StateProcess) -> Result<Self> {
        let pi = joint.flat();
        match process {
            StateProcess::Iid => Ok(StateSampler::Iid(cumulative(&pi))),
            StateProcess::Markov { transition } => {
                validate_markov(transition, &pi)?;
                Ok(StateSampler::Markov {
                    rows: transition.iter().map(|r| cumulative(r)).collect(),
                    current: None,
                    initial: cumulative(&pi),
                })
            }
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> usize {
        match self {
            StateSampler::Iid(cum) => pick(cum, rng.gen()),
            StateSampler::Markov { rows, current, initial } => {
                let s = match *current {
                    None => pick(initial, rng.gen()),
                    Some(c) => pick(&rows[c], rng.gen()),
                };
                *current = Some(s);
                s
            }
        }
    }
}

/// Checks that `transition` is a stochastic matrix with stationary law `pi`.
pub fn validate_markov(transition: &[Vec<f64>], pi: &[f64]) -> Result<()> {
    let n = pi.len();
    if transition.len() != n || transition.iter().any(|r| r.len() != n) {
        return Err(Error::Simulation(format!("transition matrix must be {n} x {n}")));
    }
    for (i, row) in transition.iter().enumerate() {
        if row.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
            return Err(Error::Simulation(format!("transition row {i} has an invalid entry")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > crate::channel_model::PMF_SUM_TOL {
            return Err(Error::Simulation(format!("transition row {i} sums to {s}")));
        }
    }
    for j in 0..n {
        let v: f64 = (0..n).map(|i| pi[i] * transition[i][j]).sum();
        if (v - pi[j]).abs() > STATIONARY_TOL {
            return Err(Error::Simulation(format!(
                "joint pmf is not stationary for the transition matrix (state {j}: {v} vs {})",
                pi[j]
            )));
        }
    }
    Ok(())
}

fn check_shapes(caps: &PerStateCapacities, joint: &JointStatePmf, policy: Option<&LinkSelectionPolicy>) -> Result<()> {
    let (n1, n2) = (caps.a.len(), caps.b.len());
    if joint.n1() != n1 || joint.probs.iter().any(|r| r.len() != n2) {
        return Err(Error::DimensionMismatch {
            what: "joint pmf vs capacity table",
            expected: n1 * n2,
            got: joint.probs.iter().map(Vec::len).sum(),
        });
    }
    if let Some(p) = policy {
        if p.decision.len() != n1 || p.decision.iter().any(|r| r.len() != n2) {
            return Err(Error::DimensionMismatch {
                what: "policy table vs capacity table",
                expected: n1 * n2,
                got: p.decision.iter().map(Vec::len).sum(),
            });
        }
        if p.has_coin() && p.coin_prob.is_none() {
            return Err(Error::MissingCoinProbability);
        }
    }
    Ok(())
}

/// Runs the adaptive link-selection protocol for `cfg.blocks` blocks.
pub fn simulate(
    caps: &PerStateCapacities,
    joint: &JointStatePmf,
    policy: &LinkSelectionPolicy,
    cfg: &SimConfig,
) -> Result<SimTrace> {
    check_shapes(caps, joint, Some(policy))?;
    let n2 = caps.b.len();
    let a: Vec<u64> = caps.a.iter().map(|&v| to_units(v)).collect();
    let b: Vec<u64> = caps.b.iter().map(|&v| to_units(v)).collect();
    let pc = policy.coin_prob.unwrap_or(0.0);
    let mut states = StateSampler::new(joint, &cfg.state_process)?;
    run_blocks(cfg, |rng, _| {
        let k = states.next(rng);
        let (s1, s2) = (k / n2, k % n2);
        let relay = match policy.get(s1, s2) {
            Decision::Relay => true,
            Decision::Source | Decision::Irrelevant => false,
            Decision::Coin => rng.gen::<f64>() < pc,
        };
        Draw {
            state: BlockState::Discrete(s1, s2),
            relay,
            arrive: a[s1],
            capacity: b[s2],
        }
    })
}

/// Non-adaptive baseline: the relay alternates receive/transmit every block
/// (`d = 0, 1, 0, 1, ...`) whatever the states.
pub fn baseline_alternating(caps: &PerStateCapacities, joint: &JointStatePmf, cfg: &SimConfig) -> Result<SimTrace> {
    check_shapes(caps, joint, None)?;
    let n2 = caps.b.len();
    let a: Vec<u64> = caps.a.iter().map(|&v| to_units(v)).collect();
    let b: Vec<u64> = caps.b.iter().map(|&v| to_units(v)).collect();
    let mut states = StateSampler::new(joint, &cfg.state_process)?;
    run_blocks(cfg, |rng, i| {
        let k = states.next(rng);
        let (s1, s2) = (k / n2, k % n2);
        Draw {
            state: BlockState::Discrete(s1, s2),
            relay: i % 2 == 1,
            arrive: a[s1],
            capacity: b[s2],
        }
    })
}

/// Adaptive protocol on a fading model: relay iff `log2(1+g2) > rho log2(1+g1)`,
/// with `coin_prob` applied to exact ties when given. Only i.i.d. fading is
/// supported.
pub fn simulate_fading(model: &FadingModel, rho: f64, coin_prob: Option<f64>, cfg: &SimConfig) -> Result<SimTrace> {
    model.validate()?;
    if !(rho >= 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be >= 0, got {rho}")));
    }
    if cfg.state_process != StateProcess::Iid {
        return Err(Error::Simulation("fading simulation supports only i.i.d. states".into()));
    }
    let sampler = model.sampler();
    run_blocks(cfg, |rng, _| {
        let (g1, g2) = sampler.sample(rng);
        let a = g1.ln_1p() / std::f64::consts::LN_2;
        let b = g2.ln_1p() / std::f64::consts::LN_2;
        let tie = (b - rho * a).abs() <= TIE_TOL * b.max(1.0);
        let relay = match coin_prob {
            Some(pc) if tie => rng.gen::<f64>() < pc,
            _ => b > rho * a,
        };
        Draw {
            state: BlockState::Snr(g1, g2),
            relay,
            arrive: to_units(a),
            capacity: to_units(b),
        }
    })
}

/// Independent runs, one per seed, in seed order.
pub fn simulate_many(
    caps: &PerStateCapacities,
    joint: &JointStatePmf,
    policy: &LinkSelectionPolicy,
    cfg: &SimConfig,
    seeds: &[u64],
    exec: Execution,
) -> Result<Vec<SimTrace>> {
    par::map_slice(exec, seeds, |&seed| {
        let cfg = SimConfig { seed, ..cfg.clone() };
        simulate(caps, joint, policy, &cfg)
    })
    .into_iter()
    .collect()
}
