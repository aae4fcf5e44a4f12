//! Three-way comparison on a tiny system: the joint-state simulator, the
//! measure-valued simulator under the lifted policy, and value iteration.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact::{value_iteration, ValueTable};
use crate::model::{lift_profile, ActionDistribution, EmpiricalMeasure, ModelSpec};
use crate::sim::{
    aggregated_joint_rates, discounted_reward, replicate, simulate_joint_with_rng, simulate_with_rng, system_rates,
    FeedbackRule, JointRule, McEstimate, Policy,
};

/// Value iteration tolerance used for the exact leg.
pub const EXACT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceReport {
    pub model: String,
    pub n: u64,
    pub initial_counts: Vec<u64>,
    pub exact_value: f64,
    /// Exact value recomputed at the measure of the reversed joint state.
    pub exact_value_permuted: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub joint: Option<McSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measure: Option<McSummary>,
    /// max over all joint states of |aggregated joint rate − measure rate|.
    pub identity_max_error: f64,
    /// max over all joint states x of the rate difference between x and
    /// its reversal.
    pub permutation_max_error: f64,
    pub joint_states_checked: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct McSummary {
    pub mean: f64,
    pub se: f64,
    pub replications: usize,
}

impl From<&McEstimate> for McSummary {
    fn from(e: &McEstimate) -> Self {
        Self { mean: e.mean, se: e.se, replications: e.values.len() }
    }
}

impl EquivalenceReport {
    /// |a − b| / combined SE, with exact values carrying no error.
    pub fn z_scores(&self) -> Option<(f64, f64, f64)> {
        let (j, m) = (self.joint.as_ref()?, self.measure.as_ref()?);
        let z = |d: f64, s: f64| if s > 0.0 { d.abs() / s } else if d == 0.0 { 0.0 } else { f64::INFINITY };
        Some((
            z(j.mean - self.exact_value, j.se),
            z(m.mean - self.exact_value, m.se),
            z(j.mean - m.mean, (j.se * j.se + m.se * m.se).sqrt()),
        ))
    }
}

/// Markov policy from a value table: the argmax actions at the lattice
/// point of μ.
fn table_actions(table: &ValueTable, mu: &[f64]) -> Vec<u16> {
    let n = table.lattice.n();
    let counts: Vec<u64> = mu.iter().map(|m| (m * n as f64).round() as u64).collect();
    let idx = table.lattice.rank(&counts).expect("measure of an N-agent state lies on the lattice");
    table.policy_at(idx).expect("value iteration records its policy").to_vec()
}

fn rate_matrix(d: usize, rates: &[(usize, usize, f64)]) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for &(i, j, r) in rates {
        m[i * d + j] += r;
    }
    m
}

/// Every x ∈ S^n in lexicographic order.
fn joint_states(d: usize, n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut x = vec![0usize; n];
    loop {
        out.push(x.clone());
        let mut k = n;
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            x[k] += 1;
            if x[k] < d {
                break;
            }
            x[k] = 0;
        }
    }
}

/// Runs the comparison from the rounding of the model's initial state.
/// With `replications = 0` only the exact checks are made.
pub fn equivalence_study(model: &ModelSpec, n: u64, replications: usize, seed: u64) -> Result<EquivalenceReport> {
    if n == 0 || n > 4 {
        return Err(Error::InvalidParameter(format!("equivalence study needs 1 <= N <= 4, got {n}")));
    }
    let d = model.num_states();
    let table = Arc::new(value_iteration(model, n, EXACT_TOL)?);

    let lens: Vec<usize> = (0..d).map(|i| model.actions.len(i)).collect();
    let t = table.clone();
    let m = lens.clone();
    let measure_rule = FeedbackRule::new("value_iteration", move |mu| {
        let acts = table_actions(&t, mu);
        acts.iter().enumerate().map(|(i, &k)| ActionDistribution::dirac(m[i], k as usize)).collect()
    });
    let t = table.clone();
    let m = lens;
    let joint_rule = JointRule::new(move |k, x, mu| {
        let acts = table_actions(&t, mu);
        ActionDistribution::dirac(m[x[k]], acts[x[k]] as usize)
    });

    let mut identity_max_error = 0.0f64;
    let mut permutation_max_error = 0.0f64;
    let states = joint_states(d, n as usize);
    for x in &states {
        let mu = EmpiricalMeasure::from_joint(x, d)?;
        let joint = rate_matrix(d, &aggregated_joint_rates(model, x, &joint_rule));
        let kernels = joint_rule.kernels(x, &mu.fractions());
        let lifted = lift_profile(&model.actions, &kernels, x)?;
        let measure = rate_matrix(d, &system_rates(model, &mu, &lifted));
        for (a, b) in joint.iter().zip(&measure) {
            identity_max_error = identity_max_error.max((a - b).abs());
        }
        let rev: Vec<usize> = x.iter().rev().copied().collect();
        let permuted = rate_matrix(d, &aggregated_joint_rates(model, &rev, &joint_rule));
        for (a, b) in joint.iter().zip(&permuted) {
            permutation_max_error = permutation_max_error.max((a - b).abs());
        }
    }

    let mu0 = EmpiricalMeasure::rounded(&model.initial, n)?;
    let x0: Vec<usize> = mu0.counts().iter().enumerate().flat_map(|(i, &c)| std::iter::repeat(i).take(c as usize)).collect();
    let x0_rev: Vec<usize> = x0.iter().rev().copied().collect();
    let exact_value = table.value_at(&mu0).expect("rounded measure lies on the lattice");
    let exact_value_permuted =
        table.value_at(&EmpiricalMeasure::from_joint(&x0_rev, d)?).expect("reversed state lies on the lattice");

    let (joint, measure) = if replications > 0 {
        let jv = replicate(replications, seed, |rng| {
            discounted_reward(model, &simulate_joint_with_rng(model, &x0, &joint_rule, rng)?)
        })?;
        let policy = Policy::Feedback(measure_rule);
        // A separate seed keeps the two estimates independent.
        let mv = replicate(replications, seed.wrapping_add(1), |rng| {
            discounted_reward(model, &simulate_with_rng(model, &mu0, &policy, rng)?)
        })?;
        (
            Some(McSummary::from(&McEstimate::from_values(jv))),
            Some(McSummary::from(&McEstimate::from_values(mv))),
        )
    } else {
        (None, None)
    };

    Ok(EquivalenceReport {
        model: model.name.clone(),
        n,
        initial_counts: mu0.counts().to_vec(),
        exact_value,
        exact_value_permuted,
        joint,
        measure,
        identity_max_error,
        permutation_max_error,
        joint_states_checked: states.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures;

    #[test]
    fn enumerates_joint_states() {
        let s = joint_states(2, 3);
        assert_eq!(s.len(), 8);
        assert_eq!(s[0], vec![0, 0, 0]);
        assert_eq!(s[1], vec![0, 0, 1]);
        assert_eq!(s[7], vec![1, 1, 1]);
    }

    #[test]
    fn identity_is_exact_on_fixture() {
        let m = fixtures::two_state_two_action();
        for n in 1..=4 {
            let r = equivalence_study(&m, n, 0, 0).unwrap();
            assert!(r.identity_max_error <= 1e-12);
            assert_eq!(r.permutation_max_error, 0.0);
            assert_eq!(r.exact_value, r.exact_value_permuted);
        }
        assert!(equivalence_study(&m, 5, 0, 0).is_err());
    }
}
