//! Controlled mean-field continuous-time Markov decision processes on a
//! finite state space.
//!
//! * [`model`]: model data, empirical measures, validators, built-in models.
//! * [`sim`]: exact event-driven simulation of the N-agent system.
//! * [`exact`]: value iteration and backward integration on P_N(S).
//! * [`limit`]: the deterministic limit problem and its optimizers.
//! * [`experiments`]: scripted studies comparing the two.

pub mod control;
pub mod error;
pub mod exact;
pub mod experiments;
pub mod io;
pub mod limit;
pub mod model;
pub mod sim;

pub use control::{RelaxedControlPath, TimeGrid};
pub use error::{Error, Result};
pub use model::{
    ActionDistribution, ActionGrid, ActionProfile, Dynamics, EmpiricalMeasure, Horizon, ModelSpec, StateSpace,
};
