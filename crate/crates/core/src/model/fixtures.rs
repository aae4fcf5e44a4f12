//! Small hand-built models used by tests, studies and examples.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::{ActionGrid, FnDynamics, Horizon, ModelSpec, StateSpace};
use crate::error::Result;

/// Two states, actions {0, 1} in both, μ-dependent rates, β = 1 and an
/// infinite horizon.
///
/// q(1|0,a,μ) = 0.5 + μ(1) + 0.5a, q(0|1,a,μ) = 0.2 + 1.5a·μ(0),
/// r(0,a,μ) = 1 − 0.2a, r(1,a,μ) = 0.3μ(0) − 0.5a.
pub fn two_state_two_action() -> ModelSpec {
    let dynamics = FnDynamics {
        intensity: Box::new(|i, a, mu, row| {
            if i == 0 {
                row[1] = 0.5 + mu[1] + 0.5 * a;
                row[0] = -row[1];
            } else {
                row[0] = 0.2 + 1.5 * a * mu[0];
                row[1] = -row[0];
            }
        }),
        reward: Box::new(|i, a, mu| if i == 0 { 1.0 - 0.2 * a } else { 0.3 * mu[0] - 0.5 * a }),
        terminal: None,
        affine: true,
    };
    ModelSpec::new(
        "two_state_two_action",
        StateSpace::new(["0", "1"]).unwrap(),
        ActionGrid::new(vec![vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap(),
        Arc::new(dynamics),
        1.0,
        Horizon::Infinite,
        vec![1.0, 0.0],
        BTreeMap::new(),
    )
    .unwrap()
}

/// Uncontrolled two-state chain with birth rate `up` and death rate `down`
/// per agent; reward 1 per agent in state 1.
pub fn birth_death(up: f64, down: f64, beta: f64) -> ModelSpec {
    let dynamics = FnDynamics {
        intensity: Box::new(move |i, _a, _mu, row| {
            if i == 0 {
                row[1] = up;
                row[0] = -up;
            } else {
                row[0] = down;
                row[1] = -down;
            }
        }),
        reward: Box::new(|i, _a, _mu| if i == 1 { 1.0 } else { 0.0 }),
        terminal: None,
        affine: true,
    };
    ModelSpec::new(
        "birth_death",
        StateSpace::new(["0", "1"]).unwrap(),
        ActionGrid::new(vec![vec![0.0], vec![0.0]]).unwrap(),
        Arc::new(dynamics),
        beta,
        Horizon::Infinite,
        vec![1.0, 0.0],
        BTreeMap::new(),
    )
    .unwrap()
}

/// All intensities zero; reward r(i,a,μ) = `reward_per_state[i]` + a·μ(i)
/// with actions {0, 1, 2} in every state.
pub fn frozen(reward_per_state: Vec<f64>, beta: f64, horizon: Horizon) -> Result<ModelSpec> {
    let d = reward_per_state.len();
    let labels: Vec<String> = (0..d).map(|i| i.to_string()).collect();
    let base = reward_per_state.clone();
    let dynamics = FnDynamics {
        intensity: Box::new(|_, _, _, _| {}),
        reward: Box::new(move |i, a, mu| base[i] + a * mu[i]),
        terminal: None,
        affine: true,
    };
    let mut initial = vec![0.0; d];
    initial[0] = 1.0;
    ModelSpec::new(
        "frozen",
        StateSpace::new(labels)?,
        ActionGrid::new(vec![vec![0.0, 1.0, 2.0]; d])?,
        Arc::new(dynamics),
        beta,
        horizon,
        initial,
        BTreeMap::new(),
    )
}

/// Reward constant `c` per agent, arbitrary controlled dynamics.
pub fn constant_reward(c: f64, beta: f64) -> ModelSpec {
    let dynamics = FnDynamics {
        intensity: Box::new(|i, a, mu, row| {
            let j = 1 - i;
            row[j] = 0.3 + a * (0.5 + mu[j]);
            row[i] = -row[j];
        }),
        reward: Box::new(move |_, _, _| c),
        terminal: None,
        affine: true,
    };
    ModelSpec::new(
        "constant_reward",
        StateSpace::new(["0", "1"]).unwrap(),
        ActionGrid::new(vec![vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap(),
        Arc::new(dynamics),
        beta,
        Horizon::Infinite,
        vec![0.5, 0.5],
        BTreeMap::new(),
    )
    .unwrap()
}

/// Three states on a cycle with logistic-type μ-dependent rates and a
/// smooth terminal reward. Used for order-of-accuracy checks.
pub fn smooth_cycle(horizon: f64) -> ModelSpec {
    let dynamics = FnDynamics {
        intensity: Box::new(|i, a, mu, row| {
            let j = (i + 1) % 3;
            row[j] = 0.4 + 0.8 * mu[j] + 0.3 * a;
            row[i] = -row[j];
        }),
        reward: Box::new(|i, a, mu| (i as f64) * 0.5 + mu[0] * mu[1] - 0.1 * a),
        terminal: Some(Box::new(|mu| mu[2] * mu[2])),
        affine: true,
    };
    ModelSpec::new(
        "smooth_cycle",
        StateSpace::new(["a", "b", "c"]).unwrap(),
        ActionGrid::new(vec![vec![0.0, 1.0]; 3]).unwrap(),
        Arc::new(dynamics),
        0.3,
        Horizon::Finite(horizon),
        vec![0.6, 0.3, 0.1],
        BTreeMap::new(),
    )
    .unwrap()
}

/// A row that sums to 0.1 instead of 0.
pub fn leaky() -> ModelSpec {
    let dynamics = FnDynamics {
        intensity: Box::new(|i, _a, _mu, row| {
            let j = 1 - i;
            row[j] = 1.0;
            row[i] = if i == 0 { -0.9 } else { -1.0 };
        }),
        reward: Box::new(|_, _, _| 0.0),
        terminal: None,
        affine: true,
    };
    ModelSpec::new(
        "leaky",
        StateSpace::new(["0", "1"]).unwrap(),
        ActionGrid::new(vec![vec![0.0], vec![0.0]]).unwrap(),
        Arc::new(dynamics),
        1.0,
        Horizon::Infinite,
        vec![1.0, 0.0],
        BTreeMap::new(),
    )
    .unwrap()
}
