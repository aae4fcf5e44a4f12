//! Model abstraction: state and action spaces, empirical measures, the
//! intensity/reward interface and the per-agent policy lift.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use num_traits::Num;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod fixtures;
pub mod registry;
pub mod validate;

pub use registry::{build_unchecked, reference_control, registry_get, MODEL_NAMES};
pub use validate::{default_probe_grid, validate_assumptions, ValidationReport};

/// Tolerance used when checking that action weights sum to one.
pub const WEIGHT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpace {
    labels: Vec<String>,
}

impl StateSpace {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(Error::InvalidParameter("state space is empty".into()));
        }
        for (k, l) in labels.iter().enumerate() {
            if labels[..k].contains(l) {
                return Err(Error::InvalidParameter(format!("duplicate state label `{l}`")));
            }
        }
        Ok(Self { labels })
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// Finite admissible action values D(i) for every state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionGrid {
    per_state: Vec<Vec<f64>>,
}

impl ActionGrid {
    pub fn new(per_state: Vec<Vec<f64>>) -> Result<Self> {
        for (i, acts) in per_state.iter().enumerate() {
            if acts.is_empty() {
                return Err(Error::InvalidParameter(format!("state {i} has no actions")));
            }
            for (k, a) in acts.iter().enumerate() {
                if !a.is_finite() {
                    return Err(Error::InvalidParameter(format!("state {i}: non-finite action")));
                }
                if acts[..k].contains(a) {
                    return Err(Error::InvalidParameter(format!("state {i}: duplicate action {a}")));
                }
            }
        }
        Ok(Self { per_state })
    }

    /// `points` equally spaced values on `[lo, hi]`.
    pub fn interval(lo: f64, hi: f64, points: usize) -> Vec<f64> {
        if points <= 1 {
            return vec![lo];
        }
        (0..points)
            .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
            .collect()
    }

    pub fn actions(&self, i: usize) -> &[f64] {
        &self.per_state[i]
    }

    pub fn len(&self, i: usize) -> usize {
        self.per_state[i].len()
    }

    pub fn num_states(&self) -> usize {
        self.per_state.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_state.is_empty()
    }
}

/// Probability weights over the action grid of one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    weights: Vec<f64>,
}

impl ActionDistribution {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidDistribution("no weights".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidDistribution(format!("negative or non-finite weight in {weights:?}")));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > WEIGHT_TOL * weights.len().max(1) as f64 {
            return Err(Error::InvalidDistribution(format!("weights sum to {s}")));
        }
        Ok(Self { weights })
    }

    /// Builds a distribution after clipping tiny negatives and renormalising.
    /// Intended for weights produced by numerical procedures.
    pub fn normalized(mut weights: Vec<f64>) -> Result<Self> {
        for w in weights.iter_mut() {
            if *w < 0.0 {
                *w = 0.0;
            }
        }
        let s: f64 = weights.iter().sum();
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::InvalidDistribution(format!("cannot normalise {weights:?}")));
        }
        weights.iter_mut().for_each(|w| *w /= s);
        Ok(Self { weights })
    }

    /// Unchecked weights, used for finite-difference perturbations that
    /// leave the simplex.
    pub(crate) fn raw(weights: Vec<f64>) -> Self {
        Self { weights }
    }

    pub fn dirac(len: usize, k: usize) -> Self {
        let mut weights = vec![0.0; len];
        weights[k] = 1.0;
        Self { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Index of the atom if the distribution is a Dirac mass.
    pub fn as_dirac(&self) -> Option<usize> {
        let k = self.weights.iter().position(|w| *w == 1.0)?;
        Some(k)
    }

    pub fn mean(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

/// One action distribution per state.
pub type ActionProfile = Vec<ActionDistribution>;

/// Dirac profile selecting action index `idx[i]` in state `i`.
pub fn dirac_profile(actions: &ActionGrid, idx: &[usize]) -> ActionProfile {
    idx.iter()
        .enumerate()
        .map(|(i, &k)| ActionDistribution::dirac(actions.len(i), k))
        .collect()
}

/// Integer occupancy counts of N agents.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    counts: Vec<u64>,
    n: u64,
}

impl EmpiricalMeasure {
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        let n: u64 = counts.iter().sum();
        if n == 0 {
            return Err(Error::InvalidMeasure("no agents".into()));
        }
        Ok(Self { counts, n })
    }

    /// Largest-remainder rounding of `mu` to the lattice with `n` agents.
    /// Ties go to the lowest state index.
    pub fn rounded(mu: &[f64], n: u64) -> Result<Self> {
        check_probability(mu)?;
        if n == 0 {
            return Err(Error::InvalidMeasure("no agents".into()));
        }
        let s: f64 = mu.iter().sum();
        let scaled: Vec<f64> = mu.iter().map(|m| m / s * n as f64).collect();
        let mut counts: Vec<u64> = scaled.iter().map(|x| x.floor() as u64).collect();
        let assigned: u64 = counts.iter().sum();
        let mut order: Vec<usize> = (0..mu.len()).collect();
        order.sort_by(|&a, &b| {
            let ra = scaled[a] - scaled[a].floor();
            let rb = scaled[b] - scaled[b].floor();
            rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
        });
        for &i in order.iter().take((n - assigned.min(n)) as usize) {
            counts[i] += 1;
        }
        Self::new(counts)
    }

    /// Each of the `n` agents draws its state independently from `mu`.
    pub fn sampled<R: Rng + ?Sized>(mu: &[f64], n: u64, rng: &mut R) -> Result<Self> {
        check_probability(mu)?;
        let mut counts = vec![0u64; mu.len()];
        for _ in 0..n {
            let u: f64 = rng.gen::<f64>();
            let mut acc = 0.0;
            let mut pick = mu.len() - 1;
            for (i, m) in mu.iter().enumerate() {
                acc += m;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            counts[pick] += 1;
        }
        Self::new(counts)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn num_states(&self) -> usize {
        self.counts.len()
    }

    pub fn fraction(&self, i: usize) -> f64 {
        self.counts[i] as f64 / self.n as f64
    }

    pub fn fractions(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }

    /// μ^{i→j}: one agent moves from `i` to `j`.
    pub fn transition(&self, i: usize, j: usize) -> Result<Self> {
        let mut out = self.clone();
        out.apply_transition(i, j)?;
        Ok(out)
    }

    pub fn apply_transition(&mut self, i: usize, j: usize) -> Result<()> {
        if i == j {
            return Err(Error::SameState(i));
        }
        if self.counts[i] == 0 {
            return Err(Error::EmptySourceState(i));
        }
        self.counts[i] -= 1;
        self.counts[j] += 1;
        Ok(())
    }

    pub fn from_joint(x: &[usize], num_states: usize) -> Result<Self> {
        let mut counts = vec![0u64; num_states];
        for &s in x {
            if s >= num_states {
                return Err(Error::InvalidMeasure(format!("state {s} out of range")));
            }
            counts[s] += 1;
        }
        Self::new(counts)
    }
}

/// Free-function form of [`EmpiricalMeasure::transition`].
pub fn measure_transition(mu: &EmpiricalMeasure, i: usize, j: usize) -> Result<EmpiricalMeasure> {
    mu.transition(i, j)
}

pub(crate) fn check_probability(mu: &[f64]) -> Result<()> {
    if mu.iter().any(|m| !m.is_finite() || *m < 0.0) {
        return Err(Error::InvalidMeasure(format!("{mu:?} has negative or non-finite entries")));
    }
    let s: f64 = mu.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidMeasure(format!("{mu:?} sums to {s}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Horizon {
    Finite(f64),
    Infinite,
}

impl Horizon {
    pub fn finite(&self) -> Option<f64> {
        match self {
            Horizon::Finite(t) => Some(*t),
            Horizon::Infinite => None,
        }
    }
}

/// β·T_trunc used to truncate infinite-horizon simulations and integrals.
pub const TRUNCATION_EXPONENT: f64 = 30.0;

/// Model data q, r, g. Implementations must be pure.
///
/// `intensity` receives a zeroed `row` of length |S| and writes the row
/// q(·|i,a,μ), diagonal included.
pub trait Dynamics: Send + Sync {
    fn intensity(&self, i: usize, a: f64, mu: &[f64], row: &mut [f64]);

    fn reward(&self, i: usize, a: f64, mu: &[f64]) -> f64;

    /// μ(i)·r(i,a,μ), the contribution of state `i` to the system reward.
    /// Models whose per-agent reward is singular at μ(i) = 0 override this
    /// with the continuous extension.
    fn weighted_reward(&self, i: usize, a: f64, mu: &[f64]) -> f64 {
        if mu[i] == 0.0 {
            0.0
        } else {
            mu[i] * self.reward(i, a, mu)
        }
    }

    fn terminal(&self, _mu: &[f64]) -> f64 {
        0.0
    }

    /// True when q and r are affine in the action value, so a distribution
    /// acts through its mean.
    fn action_affine(&self) -> bool {
        false
    }
}

type IntensityFn = dyn Fn(usize, f64, &[f64], &mut [f64]) + Send + Sync;
type RewardFn = dyn Fn(usize, f64, &[f64]) -> f64 + Send + Sync;
type TerminalFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Closure-backed dynamics, handy for fixtures.
pub struct FnDynamics {
    pub intensity: Box<IntensityFn>,
    pub reward: Box<RewardFn>,
    pub terminal: Option<Box<TerminalFn>>,
    pub affine: bool,
}

impl Dynamics for FnDynamics {
    fn intensity(&self, i: usize, a: f64, mu: &[f64], row: &mut [f64]) {
        (self.intensity)(i, a, mu, row)
    }
    fn reward(&self, i: usize, a: f64, mu: &[f64]) -> f64 {
        (self.reward)(i, a, mu)
    }
    fn terminal(&self, mu: &[f64]) -> f64 {
        self.terminal.as_ref().map_or(0.0, |g| g(mu))
    }
    fn action_affine(&self) -> bool {
        self.affine
    }
}

/// Σ_k α^{state_k}(action_k) ≤ cap, coupling the action weights of
/// several states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceConstraint {
    pub members: Vec<(usize, usize)>,
    pub cap: f64,
}

impl ResourceConstraint {
    pub fn load(&self, profile: &[ActionDistribution]) -> f64 {
        self.members.iter().map(|&(i, k)| profile[i].weights()[k]).sum()
    }
}

#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    pub states: StateSpace,
    pub actions: ActionGrid,
    pub dynamics: Arc<dyn Dynamics>,
    pub beta: f64,
    pub horizon: Horizon,
    /// Default initial distribution μ0.
    pub initial: Vec<f64>,
    pub params: BTreeMap<String, f64>,
    pub constraints: Vec<ResourceConstraint>,
    q_max: f64,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("states", &self.states)
            .field("beta", &self.beta)
            .field("horizon", &self.horizon)
            .field("params", &self.params)
            .field("q_max", &self.q_max)
            .finish()
    }
}

impl ModelSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        states: StateSpace,
        actions: ActionGrid,
        dynamics: Arc<dyn Dynamics>,
        beta: f64,
        horizon: Horizon,
        initial: Vec<f64>,
        params: BTreeMap<String, f64>,
    ) -> Result<Self> {
        if actions.num_states() != states.size() {
            return Err(Error::Dimension(format!(
                "{} action lists for {} states",
                actions.num_states(),
                states.size()
            )));
        }
        if initial.len() != states.size() {
            return Err(Error::Dimension("initial distribution length".into()));
        }
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::InvalidParameter(format!("discount rate {beta} must be finite and >= 0")));
        }
        match horizon {
            Horizon::Finite(t) if !(t > 0.0 && t.is_finite()) => {
                return Err(Error::InvalidParameter(format!("horizon {t} must be positive")))
            }
            Horizon::Infinite if beta <= 0.0 => {
                return Err(Error::InvalidParameter("infinite horizon requires beta > 0".into()))
            }
            _ => {}
        }
        let mut spec = Self {
            name: name.into(),
            states,
            actions,
            dynamics,
            beta,
            horizon,
            initial,
            params,
            constraints: Vec::new(),
            q_max: 0.0,
        };
        let grid = default_probe_grid(spec.num_states(), validate::DEFAULT_PROBE_RESOLUTION);
        spec.q_max = validate::probe_q_max(&spec, &grid);
        Ok(spec)
    }

    pub fn with_constraints(mut self, constraints: Vec<ResourceConstraint>) -> Self {
        self.constraints = constraints;
        self
    }

    pub fn num_states(&self) -> usize {
        self.states.size()
    }

    /// Probed bound on |q(j|i,a,μ)| over the default probe grid.
    pub fn q_max(&self) -> f64 {
        self.q_max
    }

    pub fn param(&self, key: &str) -> Option<f64> {
        self.params.get(key).copied()
    }

    /// End of the simulation / integration window: T, or the truncation
    /// time 30/β for an infinite horizon.
    pub fn time_end(&self) -> Result<f64> {
        match self.horizon {
            Horizon::Finite(t) => Ok(t),
            Horizon::Infinite if self.beta > 0.0 => Ok(TRUNCATION_EXPONENT / self.beta),
            Horizon::Infinite => Err(Error::InfiniteHorizonUntruncated),
        }
    }

    /// q(·|i,a,μ) for a single action value.
    pub fn intensity_row(&self, i: usize, a: f64, mu: &[f64], row: &mut [f64]) {
        row.iter_mut().for_each(|x| *x = 0.0);
        self.dynamics.intensity(i, a, mu, row);
    }

    /// ∫ q(·|i,a,μ) α^i(da), written into `out`. `scratch` has length |S|.
    pub fn mixed_row(&self, i: usize, dist: &ActionDistribution, mu: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        let acts = self.actions.actions(i);
        if self.dynamics.action_affine() {
            let a = dist.mean(acts);
            self.intensity_row(i, a, mu, out);
            return;
        }
        for (k, &w) in dist.weights().iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            self.intensity_row(i, acts[k], mu, scratch);
            for (o, s) in out.iter_mut().zip(scratch.iter()) {
                *o += w * s;
            }
        }
    }

    /// Σ_i μ(i) ∫ r(i,a,μ) α^i(da).
    pub fn system_reward(&self, mu: &[f64], profile: &[ActionDistribution]) -> f64 {
        let mut total = 0.0;
        for (i, dist) in profile.iter().enumerate() {
            let acts = self.actions.actions(i);
            if self.dynamics.action_affine() {
                total += self.dynamics.weighted_reward(i, dist.mean(acts), mu);
            } else {
                for (k, &w) in dist.weights().iter().enumerate() {
                    if w != 0.0 {
                        total += w * self.dynamics.weighted_reward(i, acts[k], mu);
                    }
                }
            }
        }
        total
    }

    pub fn terminal(&self, mu: &[f64]) -> f64 {
        self.dynamics.terminal(mu)
    }

    /// Checks that a profile has one distribution of the right length per
    /// state and respects the resource constraints.
    pub fn check_profile(&self, profile: &[ActionDistribution]) -> Result<()> {
        if profile.len() != self.num_states() {
            return Err(Error::Dimension(format!(
                "profile has {} entries for {} states",
                profile.len(),
                self.num_states()
            )));
        }
        for (i, d) in profile.iter().enumerate() {
            if d.len() != self.actions.len(i) {
                return Err(Error::Dimension(format!(
                    "state {i}: {} weights for {} actions",
                    d.len(),
                    self.actions.len(i)
                )));
            }
        }
        for c in &self.constraints {
            let load = c.load(profile);
            if load > c.cap + 1e-9 {
                return Err(Error::InvalidDistribution(format!("resource load {load} exceeds {}", c.cap)));
            }
        }
        Ok(())
    }

    /// Profile with action index 0 in every state.
    pub fn default_profile(&self) -> ActionProfile {
        dirac_profile(&self.actions, &vec![0; self.num_states()])
    }
}

/// Equally weighted mixture of the kernels of the agents in `state`:
/// π̂^i = (1/(Nμ(i))) Σ_k π^k 1{x^k = i}.
///
/// `kernels[k]` holds agent k's weights over the action grid of its own
/// state `x[k]`.
pub fn lift_policy<T>(kernels: &[Vec<T>], x: &[usize], state: usize) -> Result<Vec<T>>
where
    T: Num + Clone,
{
    if kernels.len() != x.len() {
        return Err(Error::Dimension("one kernel per agent required".into()));
    }
    let mut acc: Option<Vec<T>> = None;
    let mut count = T::zero();
    for (k, &xk) in x.iter().enumerate() {
        if xk != state {
            continue;
        }
        count = count + T::one();
        acc = Some(match acc {
            None => kernels[k].clone(),
            Some(mut a) => {
                if a.len() != kernels[k].len() {
                    return Err(Error::Dimension("kernels of one state differ in length".into()));
                }
                for (ai, ki) in a.iter_mut().zip(&kernels[k]) {
                    *ai = ai.clone() + ki.clone();
                }
                a
            }
        });
    }
    let acc = acc.ok_or(Error::EmptySourceState(state))?;
    Ok(acc.into_iter().map(|v| v / count.clone()).collect())
}

/// Lifted profile for every state; unoccupied states get action index 0.
pub fn lift_profile(actions: &ActionGrid, kernels: &[ActionDistribution], x: &[usize]) -> Result<ActionProfile> {
    let raw: Vec<Vec<f64>> = kernels.iter().map(|d| d.weights().to_vec()).collect();
    (0..actions.num_states())
        .map(|i| match lift_policy(&raw, x, i) {
            Ok(w) => ActionDistribution::normalized(w),
            Err(Error::EmptySourceState(_)) => Ok(ActionDistribution::dirac(actions.len(i), 0)),
            Err(e) => Err(e),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transition_moves_one_agent() {
        let mu = EmpiricalMeasure::new(vec![2, 0]).unwrap();
        assert_eq!(mu.transition(0, 1).unwrap().counts(), &[1, 1]);
        let big = EmpiricalMeasure::new(vec![500, 100, 100, 0, 500, 100, 100, 0]).unwrap();
        assert_eq!(big.n(), 1400);
        assert_eq!(big.transition(1, 2).unwrap().counts(), &[500, 99, 101, 0, 500, 100, 100, 0]);
        let lone = EmpiricalMeasure::new(vec![0, 5]).unwrap();
        assert!(matches!(lone.transition(0, 1), Err(Error::EmptySourceState(0))));
        assert!(matches!(lone.transition(1, 1), Err(Error::SameState(1))));
    }

    #[test]
    fn resource_initial_scales_to_1400() {
        let mu0: Vec<f64> = [5.0, 1.0, 1.0, 0.0, 5.0, 1.0, 1.0, 0.0].iter().map(|x| x / 14.0).collect();
        let m = EmpiricalMeasure::rounded(&mu0, 1400).unwrap();
        assert_eq!(m.counts(), &[500, 100, 100, 0, 500, 100, 100, 0]);
        let m = m.transition(0, 1).unwrap();
        assert_eq!(m.counts(), &[499, 101, 100, 0, 500, 100, 100, 0]);
    }

    #[test]
    fn largest_remainder_breaks_ties_low() {
        let m = EmpiricalMeasure::rounded(&[1.0 / 3.0; 3], 4).unwrap();
        assert_eq!(m.counts(), &[2, 1, 1]);
        let m = EmpiricalMeasure::rounded(&[0.5, 0.5], 3).unwrap();
        assert_eq!(m.counts(), &[2, 1]);
    }

    #[test]
    fn action_grid_rejects_bad_lists() {
        assert!(ActionGrid::new(vec![vec![0.0], vec![]]).is_err());
        assert!(ActionGrid::new(vec![vec![0.0, 0.0]]).is_err());
        assert_eq!(ActionGrid::interval(0.0, 1.0, 101)[50], 0.5);
    }

    #[test]
    fn distribution_checks() {
        assert!(ActionDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(ActionDistribution::new(vec![-0.1, 1.1]).is_err());
        let d = ActionDistribution::new(vec![0.25, 0.75]).unwrap();
        assert_eq!(d.mean(&[0.0, 2.0]), 1.5);
        assert_eq!(ActionDistribution::dirac(3, 2).as_dirac(), Some(2));
    }

    #[test]
    fn lift_two_point_mixture() {
        let kernels = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(lift_policy(&kernels, &[0, 0], 0).unwrap(), vec![0.5, 0.5]);
        assert!(matches!(lift_policy(&kernels, &[0, 0], 1), Err(Error::EmptySourceState(1))));
        let same = vec![vec![0.3f64, 0.7]; 4];
        let out = lift_policy(&same, &[1, 1, 1, 1], 1).unwrap();
        assert!((out[0] - 0.3).abs() < 1e-15 && (out[1] - 0.7).abs() < 1e-15);
    }
}
