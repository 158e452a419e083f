//! State-dependent half-duplex relay channel without a direct link.
//!
//! A channel is described by two finite state alphabets (one per hop), the
//! joint probability of a state pair, and one discrete memoryless channel
//! matrix per state for each hop. The half-duplex silence symbol is not a
//! matrix row: whether the source or the relay is active is decided by the
//! link-selection policy, and the matrices only describe the active
//! alphabets.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Tolerance on probability-vector sums.
pub const PMF_SUM_TOL: f64 = 1e-12;

/// State labels of the two hops. Labels are opaque; the position in the
/// list is the dense state index used everywhere else.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpace {
    pub labels_s1: Vec<String>,
    pub labels_s2: Vec<String>,
}

impl StateSpace {
    pub fn new<S: Into<String>>(
        s1: impl IntoIterator<Item = S>,
        s2: impl IntoIterator<Item = S>,
    ) -> Self {
        Self {
            labels_s1: s1.into_iter().map(Into::into).collect(),
            labels_s2: s2.into_iter().map(Into::into).collect(),
        }
    }

    /// States labelled `"0"`, `"1"`, ... on both hops.
    pub fn numbered(n1: usize, n2: usize) -> Self {
        Self::new(
            (0..n1).map(|i| i.to_string()),
            (0..n2).map(|i| i.to_string()),
        )
    }

    pub fn n1(&self) -> usize {
        self.labels_s1.len()
    }

    pub fn n2(&self) -> usize {
        self.labels_s2.len()
    }

    pub fn index_s1(&self, label: &str) -> Option<usize> {
        self.labels_s1.iter().position(|l| l == label)
    }

    pub fn index_s2(&self, label: &str) -> Option<usize> {
        self.labels_s2.iter().position(|l| l == label)
    }
}

/// Joint PMF of the state pair, `probs[s1][s2]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointStatePmf {
    pub probs: Vec<Vec<f64>>,
}

impl JointStatePmf {
    pub fn new(probs: Vec<Vec<f64>>) -> Self {
        Self { probs }
    }

    /// Product of two marginals.
    pub fn independent(p1: &[f64], p2: &[f64]) -> Self {
        Self::new(
            p1.iter()
                .map(|&x| p2.iter().map(|&y| x * y).collect())
                .collect(),
        )
    }

    pub fn uniform(n1: usize, n2: usize) -> Self {
        let w = 1.0 / (n1 * n2) as f64;
        Self::new(vec![vec![w; n2]; n1])
    }

    pub fn n1(&self) -> usize {
        self.probs.len()
    }

    pub fn n2(&self) -> usize {
        self.probs.first().map_or(0, Vec::len)
    }

    #[inline]
    pub fn get(&self, s1: usize, s2: usize) -> f64 {
        self.probs[s1][s2]
    }

    /// Row-major flattening, index `s1 * n2 + s2`.
    pub fn flat(&self) -> Vec<f64> {
        self.probs.iter().flatten().copied().collect()
    }
}

/// Transition matrix `p(y|x)` of one hop in one state; rows indexed by the
/// active input symbol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateChannel {
    pub transition: Vec<Vec<f64>>,
}

impl StateChannel {
    pub fn new(transition: Vec<Vec<f64>>) -> Self {
        Self { transition }
    }

    pub fn input_size(&self) -> usize {
        self.transition.len()
    }

    pub fn output_size(&self) -> usize {
        self.transition.first().map_or(0, Vec::len)
    }

    /// Noiseless channel on `n` symbols.
    pub fn identity(n: usize) -> Self {
        Self::new(
            (0..n)
                .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
        )
    }

    /// Channel whose output ignores the input (zero capacity).
    pub fn useless(inputs: usize, outputs: usize) -> Self {
        let w = 1.0 / outputs as f64;
        Self::new(vec![vec![w; outputs]; inputs])
    }

    /// Binary symmetric channel with crossover `p`.
    pub fn bsc(p: f64) -> Self {
        Self::new(vec![vec![1.0 - p, p], vec![p, 1.0 - p]])
    }

    /// Binary erasure channel with erasure probability `e`; outputs are
    /// `0`, `erasure`, `1`.
    pub fn bec(e: f64) -> Self {
        Self::new(vec![vec![1.0 - e, e, 0.0], vec![0.0, e, 1.0 - e]])
    }
}

/// Complete description of a relay channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelayChannelSpec {
    pub states: StateSpace,
    pub joint_pmf: JointStatePmf,
    pub sr_channels: Vec<StateChannel>,
    pub rd_channels: Vec<StateChannel>,
}

impl RelayChannelSpec {
    /// One state per hop.
    pub fn single_state(sr: StateChannel, rd: StateChannel) -> Self {
        Self {
            states: StateSpace::numbered(1, 1),
            joint_pmf: JointStatePmf::new(vec![vec![1.0]]),
            sr_channels: vec![sr],
            rd_channels: vec![rd],
        }
    }
}

/// One violated invariant, located by a path into the spec.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl Violation {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn check_labels(path: &str, labels: &[String], out: &mut Vec<Violation>) {
    if labels.is_empty() {
        out.push(Violation::new(path, format!("{path} is empty")));
    }
    let mut seen = HashSet::new();
    for (i, l) in labels.iter().enumerate() {
        if !seen.insert(l.as_str()) {
            out.push(Violation::new(
                format!("{path}[{i}]"),
                format!("{path}[{i}] duplicates label \"{l}\""),
            ));
        }
    }
}

fn check_channel(path: &str, ch: &StateChannel, out: &mut Vec<Violation>) {
    if ch.input_size() == 0 || ch.output_size() == 0 {
        out.push(Violation::new(path, format!("{path} has an empty alphabet")));
        return;
    }
    let width = ch.output_size();
    for (x, row) in ch.transition.iter().enumerate() {
        if row.len() != width {
            out.push(Violation::new(
                format!("{path}[{x}]"),
                format!("row {x} of {path} has {} entries, expected {width}", row.len()),
            ));
            continue;
        }
        if let Some(y) = row.iter().position(|&v| !(v >= 0.0 && v.is_finite())) {
            out.push(Violation::new(
                format!("{path}[{x}][{y}]"),
                format!("entry ({x}, {y}) of {path} is {} (must be finite and >= 0)", row[y]),
            ));
            continue;
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > PMF_SUM_TOL {
            out.push(Violation::new(
                format!("{path}[{x}]"),
                format!("row {x} of {path} sums to {sum}"),
            ));
        }
    }
}

/// Entry-wise and total-mass checks of a joint state PMF (any shape).
pub fn validate_joint(joint: &JointStatePmf) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut sum = 0.0;
    let mut finite = true;
    for (i, row) in joint.probs.iter().enumerate() {
        for (j, &p) in row.iter().enumerate() {
            if !(p >= 0.0 && p.is_finite()) {
                finite = false;
                out.push(Violation::new(
                    format!("joint_pmf[{i}][{j}]"),
                    format!("joint_pmf entry ({i}, {j}) is {p} (must be finite and >= 0)"),
                ));
            }
            sum += p;
        }
    }
    if finite && (sum - 1.0).abs() > PMF_SUM_TOL {
        out.push(Violation::new("joint_pmf", format!("joint_pmf sums to {sum}")));
    }
    out
}

/// Checks every structural invariant of `spec` and returns all violations;
/// an empty list means the spec is well formed.
pub fn validate_spec(spec: &RelayChannelSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    check_labels("states.labels_s1", &spec.states.labels_s1, &mut out);
    check_labels("states.labels_s2", &spec.states.labels_s2, &mut out);
    let (n1, n2) = (spec.states.n1(), spec.states.n2());

    let joint = &spec.joint_pmf.probs;
    if joint.len() != n1 || joint.iter().any(|r| r.len() != n2) {
        out.push(Violation::new(
            "joint_pmf",
            format!("joint_pmf must be a {n1} x {n2} matrix"),
        ));
    } else {
        out.extend(validate_joint(&spec.joint_pmf));
    }

    if spec.sr_channels.len() != n1 {
        out.push(Violation::new(
            "sr_channels",
            format!("sr_channels has {} entries, expected {n1}", spec.sr_channels.len()),
        ));
    }
    if spec.rd_channels.len() != n2 {
        out.push(Violation::new(
            "rd_channels",
            format!("rd_channels has {} entries, expected {n2}", spec.rd_channels.len()),
        ));
    }
    for (i, ch) in spec.sr_channels.iter().enumerate() {
        check_channel(&format!("sr_channels[{i}]"), ch, &mut out);
    }
    for (i, ch) in spec.rd_channels.iter().enumerate() {
        check_channel(&format!("rd_channels[{i}]"), ch, &mut out);
    }
    out
}

/// Marginal PMFs of `S1` (row sums) and `S2` (column sums).
pub fn marginal_state_pmfs(joint: &JointStatePmf) -> (Vec<f64>, Vec<f64>) {
    let p1 = joint.probs.iter().map(|r| r.iter().sum()).collect();
    let mut p2 = vec![0.0; joint.n2()];
    for row in &joint.probs {
        for (acc, p) in p2.iter_mut().zip(row) {
            *acc += p;
        }
    }
    (p1, p2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> RelayChannelSpec {
        RelayChannelSpec {
            states: StateSpace::new(["bad", "good"], ["bad", "good"]),
            joint_pmf: JointStatePmf::new(vec![vec![0.1, 0.2], vec![0.3, 0.4]]),
            sr_channels: vec![StateChannel::useless(2, 2), StateChannel::bsc(0.1)],
            rd_channels: vec![StateChannel::bec(0.5), StateChannel::identity(2)],
        }
    }

    #[test]
    fn well_formed_spec_is_ok() {
        assert!(validate_spec(&two_state()).is_empty());
    }

    #[test]
    fn short_row_is_reported() {
        let mut spec = two_state();
        spec.sr_channels[0] = StateChannel::new(vec![vec![0.4, 0.5], vec![0.5, 0.5]]);
        let v = validate_spec(&spec);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].message, "row 0 of sr_channels[0] sums to 0.9");
        assert_eq!(v[0].path, "sr_channels[0][0]");
    }

    #[test]
    fn joint_sum_is_reported() {
        let mut spec = two_state();
        spec.joint_pmf.probs[1][1] = 0.41;
        let v = validate_spec(&spec);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].path, "joint_pmf");
        assert!(v[0].message.contains("joint_pmf"));
    }

    #[test]
    fn structural_violations_accumulate() {
        let mut spec = two_state();
        spec.states.labels_s2 = vec!["x".into(), "x".into()];
        spec.rd_channels.pop();
        spec.joint_pmf.probs[0][0] = -0.1;
        let v = validate_spec(&spec);
        let paths: Vec<_> = v.iter().map(|x| x.path.as_str()).collect();
        assert!(paths.contains(&"states.labels_s2[1]"));
        assert!(paths.contains(&"rd_channels"));
        assert!(paths.contains(&"joint_pmf[0][0]"));
    }

    #[test]
    fn zero_probability_pairs_allowed() {
        let mut spec = two_state();
        spec.joint_pmf = JointStatePmf::new(vec![vec![0.0, 0.5], vec![0.5, 0.0]]);
        assert!(validate_spec(&spec).is_empty());
    }

    #[test]
    fn marginals() {
        let (a, b) = marginal_state_pmfs(&JointStatePmf::uniform(2, 2));
        assert_eq!((a, b), (vec![0.5, 0.5], vec![0.5, 0.5]));

        let (a, b) = marginal_state_pmfs(&JointStatePmf::new(vec![vec![0.1, 0.2], vec![0.3, 0.4]]));
        assert!((a[0] - 0.3).abs() < 1e-15 && (a[1] - 0.7).abs() < 1e-15);
        assert!((b[0] - 0.4).abs() < 1e-15 && (b[1] - 0.6).abs() < 1e-15);

        let (a, b) = marginal_state_pmfs(&JointStatePmf::new(vec![vec![1.0]]));
        assert_eq!((a, b), (vec![1.0], vec![1.0]));
    }

    #[test]
    fn label_lookup() {
        let s = two_state().states;
        assert_eq!(s.index_s1("good"), Some(1));
        assert_eq!(s.index_s2("nope"), None);
    }
}
