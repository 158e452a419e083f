//! Capacity of state-dependent half-duplex relay channels without a
//! source–destination link, and rate-level simulation of the buffer-aided
//! adaptive link-selection protocol that achieves it.
//!
//! - [`channel_model`]: state spaces, joint state law, per-state hop channels
//! - [`mutual_information`]: mutual information and Blahut–Arimoto capacity
//! - [`capacity_solver`]: threshold link selection and the balanced capacity
//! - [`fading_awgn`]: continuous-fading AWGN hops
//! - [`protocol_simulator`]: block-level buffer-aided relaying
//!
//! Data-parallel loops go through [`par`]; build without the default
//! `parallel` feature for a purely sequential library.

pub mod capacity_solver;
pub mod channel_model;
pub mod error;
pub mod fading_awgn;
pub mod mutual_information;
pub mod par;
pub mod protocol_simulator;
pub mod quadrature;

pub use capacity_solver::{
    brute_force_capacity, evaluate_policy, per_state_capacities, policy_from_rho, solve_capacity,
    solve_from_capacities, CapacityReport, Decision, LinkSelectionPolicy, PerStateCapacities,
    Threshold,
};
pub use channel_model::{
    marginal_state_pmfs, validate_spec, JointStatePmf, RelayChannelSpec, StateChannel, StateSpace,
    Violation,
};
pub use error::{Error, Result};
pub use mutual_information::{blahut_arimoto, mutual_information, CapacityResult, InputDistribution};
pub use par::Execution;
