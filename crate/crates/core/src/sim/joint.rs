//! Simulation of the full joint state x ∈ S^N with per-agent kernels.

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use super::{pick, replication_rng, sample_exp, Segment, Trajectory};
use crate::error::{Error, Result};
use crate::model::{lift_profile, ActionDistribution, EmpiricalMeasure, ModelSpec};

type KernelFn = dyn Fn(usize, &[usize], &[f64]) -> ActionDistribution + Send + Sync;

/// π^k(da|x): agent k's action distribution over the grid of its own
/// state, given the joint state and its empirical measure.
#[derive(Clone)]
pub struct JointRule {
    f: Arc<KernelFn>,
}

impl JointRule {
    pub fn new(f: impl Fn(usize, &[usize], &[f64]) -> ActionDistribution + Send + Sync + 'static) -> Self {
        Self { f: Arc::new(f) }
    }

    pub fn kernels(&self, x: &[usize], mu: &[f64]) -> Vec<ActionDistribution> {
        (0..x.len()).map(|k| (self.f)(k, x, mu)).collect()
    }
}

impl fmt::Debug for JointRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("JointRule")
    }
}

fn fractions(x: &[usize], d: usize) -> Vec<f64> {
    let mut mu = vec![0.0; d];
    for &s in x {
        mu[s] += 1.0;
    }
    let n = x.len() as f64;
    mu.iter_mut().for_each(|m| *m /= n);
    mu
}

/// Σ_k 1{x^k = i} ∫ q(j|i,a,μ[x]) π^k(da) for every i ≠ j with a positive
/// total, in lexicographic (i, j) order.
pub fn aggregated_joint_rates(model: &ModelSpec, x: &[usize], rule: &JointRule) -> Vec<(usize, usize, f64)> {
    let d = model.num_states();
    let mu = fractions(x, d);
    let kernels = rule.kernels(x, &mu);
    let mut agg = vec![0.0; d * d];
    let (mut row, mut scratch) = (vec![0.0; d], vec![0.0; d]);
    for (k, &i) in x.iter().enumerate() {
        model.mixed_row(i, &kernels[k], &mu, &mut row, &mut scratch);
        for (j, &q) in row.iter().enumerate() {
            if j != i && q > 0.0 {
                agg[i * d + j] += q;
            }
        }
    }
    let mut out = Vec::new();
    for i in 0..d {
        for j in 0..d {
            if agg[i * d + j] > 0.0 {
                out.push((i, j, agg[i * d + j]));
            }
        }
    }
    out
}

pub fn simulate_joint(model: &ModelSpec, x0: &[usize], rule: &JointRule, seed: u64) -> Result<Trajectory> {
    simulate_joint_with_rng(model, x0, rule, &mut replication_rng(seed, 0))
}

/// Per-agent event simulation. The returned trajectory is the induced
/// empirical-measure path; its controls are the lifted profiles.
pub fn simulate_joint_with_rng<R: Rng + ?Sized>(
    model: &ModelSpec,
    x0: &[usize],
    rule: &JointRule,
    rng: &mut R,
) -> Result<Trajectory> {
    let d = model.num_states();
    let n = x0.len();
    EmpiricalMeasure::from_joint(x0, d)?;
    let end = model.time_end()?;
    let mut x = x0.to_vec();
    let mut t = 0.0;
    let mut segments = Vec::new();
    let mut rates: Vec<(usize, usize, f64)> = Vec::with_capacity(n * d);
    let (mut row, mut scratch) = (vec![0.0; d], vec![0.0; d]);
    loop {
        let mu = fractions(&x, d);
        let kernels = rule.kernels(&x, &mu);
        for (k, ker) in kernels.iter().enumerate() {
            if ker.len() != model.actions.len(x[k]) {
                return Err(Error::Dimension(format!("agent {k}: kernel over {} actions", ker.len())));
            }
        }
        let lifted = lift_profile(&model.actions, &kernels, &x)?;
        let counts = EmpiricalMeasure::from_joint(&x, d)?.counts().to_vec();
        segments.push(Segment { start: t, counts, control: Arc::new(lifted), jump: t > 0.0 });

        rates.clear();
        let mut total = 0.0;
        for (k, &i) in x.iter().enumerate() {
            model.mixed_row(i, &kernels[k], &mu, &mut row, &mut scratch);
            for (j, &q) in row.iter().enumerate() {
                if j != i && q > 0.0 {
                    rates.push((k, j, q));
                    total += q;
                }
            }
        }
        let tau = if total > 0.0 { sample_exp(rng, total) } else { f64::INFINITY };
        if t + tau >= end {
            break;
        }
        t += tau;
        let (k, j) = pick(rng, &rates, total);
        x[k] = j;
    }
    Ok(Trajectory { n: n as u64, segments, end })
}
