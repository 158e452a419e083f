//! Report and trace formats.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use relaycap::capacity_solver::CapacityReport;
use relaycap::fading_awgn::FadingCapacityReport;
use relaycap::protocol_simulator::{BlockState, SimTrace, TraceRow};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::config::Mode;

pub const SCHEMA_VERSION: u32 = 1;

/// A real number that may be `+inf`, written as the string `"inf"`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtF64(pub f64);

impl Serialize for ExtF64 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for ExtF64 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(ExtF64(v)),
            Raw::Str(s) if s == "inf" => Ok(ExtF64(f64::INFINITY)),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {s:?}"))),
        }
    }
}

impl fmt::Display for ExtF64 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{:.6}", self.0)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.to_string(), passed, detail: detail.into() }
    }
}

/// Scalar results of one simulation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub blocks: u64,
    pub epsilon: f64,
    pub throughput_bits: f64,
    pub arrival_rate: f64,
    pub departure_rate: f64,
    pub final_queue_bits: f64,
    pub relay_blocks: u64,
    pub source_blocks: u64,
    pub buffer_limited_blocks: u64,
    pub buffer_limited_fraction: f64,
    pub conserved: bool,
}

impl SimSummary {
    pub fn new(t: &SimTrace, epsilon: f64) -> Self {
        Self {
            blocks: t.blocks,
            epsilon,
            throughput_bits: t.throughput_bits,
            arrival_rate: t.arrival_rate,
            departure_rate: t.departure_rate,
            final_queue_bits: t.final_queue,
            relay_blocks: t.relay_blocks,
            source_blocks: t.source_blocks,
            buffer_limited_blocks: t.buffer_limited_blocks,
            buffer_limited_fraction: t.buffer_limited_fraction(),
            conserved: t.conserves_bits(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FadingSummary {
    pub solution: FadingCapacityReport,
    /// `E[log2(1 + g)]` per hop.
    pub mean_rates_bits: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub trials: usize,
    pub within: usize,
    pub tol: f64,
    pub grid: usize,
    pub worst_gap: f64,
    pub worst_trial: usize,
    /// Trials whose gap exceeded the tolerance.
    pub failures: Vec<usize>,
}

impl OracleSummary {
    pub fn headline(&self) -> String {
        format!("{}/{} within {:e}", self.within, self.trials, self.tol)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub quantity: String,
    pub expected: Option<ExtF64>,
    pub computed: ExtF64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleSummary {
    pub name: String,
    pub params: BTreeMap<String, serde_json::Value>,
    pub comparisons: Vec<Comparison>,
}

/// Everything a run produced. Field order and content are fixed so equal
/// runs serialize to equal bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: u32,
    pub mode: Mode,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<CapacityReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<SimSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fading: Option<FadingSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example: Option<ExampleSummary>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl Report {
    pub fn new(mode: Mode, seed: u64) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            mode,
            seed,
            capacity: None,
            simulation: None,
            baseline: None,
            fading: None,
            oracle: None,
            example: None,
            checks: Vec::new(),
            passed: true,
        }
    }

    pub fn check(&mut self, c: Check) {
        self.passed &= c.passed;
        self.checks.push(c);
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report is always serializable");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

/// Sampled blocks of a run plus the labels of discrete states.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    pub labels: Option<(Vec<String>, Vec<String>)>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    block: u64,
    state_s1: std::borrow::Cow<'a, str>,
    state_s2: std::borrow::Cow<'a, str>,
    d: u8,
    #[serde(rename = "Q")]
    q: f64,
    delivered: f64,
}

/// CSV with columns `block,state_s1,state_s2,d,Q,delivered`; discrete
/// states print their labels, fading states their SNRs.
pub fn write_trace_csv<W: Write>(out: W, trace: &Trace) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if trace.rows.is_empty() {
        w.write_record(["block", "state_s1", "state_s2", "d", "Q", "delivered"])?;
    }
    for r in &trace.rows {
        let (s1, s2) = match (r.state, &trace.labels) {
            (BlockState::Discrete(i, j), Some((l1, l2))) => (l1[i].as_str().into(), l2[j].as_str().into()),
            (BlockState::Discrete(i, j), None) => (i.to_string().into(), j.to_string().into()),
            (BlockState::Snr(g1, g2), _) => (g1.to_string().into(), g2.to_string().into()),
        };
        w.serialize(CsvRow { block: r.block, state_s1: s1, state_s2: s2, d: r.d, q: r.queue_bits, delivered: r.delivered_bits })?;
    }
    w.flush()?;
    Ok(())
}
