use thiserror::Error;

use crate::channel_model::Violation;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid channel spec: {}", format_violations(.0))]
    InvalidSpec(Vec<Violation>),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("policy has coin entries but no coin probability")]
    MissingCoinProbability,

    #[error(
        "coin probability {value} lies outside [0, 1] beyond rounding \
         (rho candidate {rho}, tie mass c1 {tie_c1}, c2 {tie_c2})"
    )]
    CoinOutOfRange {
        value: f64,
        rho: f64,
        tie_c1: f64,
        tie_c2: f64,
    },

    #[error("fading model: {0}")]
    Fading(String),

    #[error("simulation: {0}")]
    Simulation(String),
}

pub type Result<T> = std::result::Result<T, Error>;

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
