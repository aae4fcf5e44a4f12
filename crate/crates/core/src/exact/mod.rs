//! Exact solution of the measure-valued MDP on P_N(S).

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ActionDistribution, EmpiricalMeasure, ModelSpec};

mod finite;
mod lattice;

pub use finite::{finite_horizon_solve, policy_evaluation, TimeValueTable};
pub use lattice::{lattice_size, SimplexLattice, DEFAULT_LATTICE_CAP};

/// Lattice points above which sweeps run in parallel.
const PAR_THRESHOLD: usize = 2048;

const NO_NEIGHBOR: u32 = u32::MAX;

/// Per lattice point, state and pure action: the weighted reward and the
/// aggregate rates N μ(i) q(j|i,a,μ).
pub(crate) struct Tabulated {
    pub lattice: SimplexLattice,
    pub d: usize,
    /// Start of state i's actions in the per-point action list.
    pub offsets: Vec<usize>,
    pub actions_per_point: usize,
    pub rewards: Vec<f64>,
    pub rates: Vec<f64>,
    pub neighbors: Vec<u32>,
    /// Largest |q(j|i,a,μ)| seen on the lattice.
    pub q_max: f64,
}

impl Tabulated {
    pub fn build(model: &ModelSpec, lattice: SimplexLattice) -> Self {
        let d = model.num_states();
        let mut offsets = Vec::with_capacity(d + 1);
        let mut acc = 0;
        for i in 0..d {
            offsets.push(acc);
            acc += model.actions.len(i);
        }
        offsets.push(acc);
        let apc = acc;
        let size = lattice.size();
        let n = lattice.n() as f64;
        let per_point: Vec<(Vec<f64>, Vec<f64>, Vec<u32>, f64)> = (0..size)
            .into_par_iter()
            .map(|p| {
                let counts = lattice.point(p);
                let mu: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
                let mut rew = vec![0.0; apc];
                let mut rat = vec![0.0; apc * d];
                let mut nb = vec![NO_NEIGHBOR; d * d];
                let mut row = vec![0.0; d];
                let mut qm = 0.0f64;
                for i in 0..d {
                    for j in 0..d {
                        if let Some(q) = lattice.neighbor(p, i, j) {
                            nb[i * d + j] = q as u32;
                        }
                    }
                    for (k, &a) in model.actions.actions(i).iter().enumerate() {
                        let slot = offsets[i] + k;
                        rew[slot] = model.dynamics.weighted_reward(i, a, &mu);
                        model.intensity_row(i, a, &mu, &mut row);
                        for j in 0..d {
                            qm = qm.max(row[j].abs());
                            if j != i {
                                rat[slot * d + j] = counts[i] as f64 * row[j];
                            }
                        }
                    }
                }
                (rew, rat, nb, qm)
            })
            .collect();
        let mut rewards = Vec::with_capacity(size * apc);
        let mut rates = Vec::with_capacity(size * apc * d);
        let mut neighbors = Vec::with_capacity(size * d * d);
        let mut q_max = 0.0f64;
        for (rew, rat, nb, qm) in per_point {
            rewards.extend(rew);
            rates.extend(rat);
            neighbors.extend(nb);
            q_max = q_max.max(qm);
        }
        Self { lattice, d, offsets, actions_per_point: apc, rewards, rates, neighbors, q_max }
    }

    pub fn size(&self) -> usize {
        self.lattice.size()
    }

    /// Reward plus generator term of pure action k in state i at point p.
    #[inline]
    pub fn action_value(&self, p: usize, i: usize, k: usize, v: &[f64]) -> f64 {
        let d = self.d;
        let slot = p * self.actions_per_point + self.offsets[i] + k;
        let mut val = self.rewards[slot];
        let rates = &self.rates[slot * d..(slot + 1) * d];
        let nb = &self.neighbors[(p * d + i) * d..(p * d + i + 1) * d];
        let vp = v[p];
        for j in 0..d {
            let r = rates[j];
            if r != 0.0 && nb[j] != NO_NEIGHBOR {
                val += r * (v[nb[j] as usize] - vp);
            }
        }
        val
    }

    /// max over D(i) of `action_value`, lowest index on ties.
    #[inline]
    pub fn best_action(&self, p: usize, i: usize, v: &[f64]) -> (f64, usize) {
        let na = self.offsets[i + 1] - self.offsets[i];
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0;
        for k in 0..na {
            let val = self.action_value(p, i, k, v);
            if val > best {
                best = val;
                arg = k;
            }
        }
        (best, arg)
    }

    /// Σ_i Σ_a α^i(a)·action_value for a given profile.
    #[inline]
    pub fn profile_value(&self, p: usize, profile: &[ActionDistribution], v: &[f64]) -> f64 {
        let mut total = 0.0;
        for (i, dist) in profile.iter().enumerate() {
            for (k, &w) in dist.weights().iter().enumerate() {
                if w != 0.0 {
                    total += w * self.action_value(p, i, k, v);
                }
            }
        }
        total
    }

    /// Σ_i max_a [...] and the argmax indices, written per point.
    pub fn max_generator(&self, v: &[f64], out: &mut [f64], policy: Option<&mut [u16]>) {
        let d = self.d;
        let body = |p: usize, o: &mut f64, pol: Option<&mut [u16]>| {
            let mut total = 0.0;
            match pol {
                Some(pol) => {
                    for i in 0..d {
                        let (b, k) = self.best_action(p, i, v);
                        total += b;
                        pol[i] = k as u16;
                    }
                }
                None => {
                    for i in 0..d {
                        total += self.best_action(p, i, v).0;
                    }
                }
            }
            *o = total;
        };
        let size = self.size();
        match policy {
            Some(pol) => {
                if size > PAR_THRESHOLD {
                    out.par_iter_mut()
                        .zip(pol.par_chunks_mut(d))
                        .enumerate()
                        .for_each(|(p, (o, pc))| body(p, o, Some(pc)));
                } else {
                    for (p, (o, pc)) in out.iter_mut().zip(pol.chunks_mut(d)).enumerate() {
                        body(p, o, Some(pc));
                    }
                }
            }
            None => {
                if size > PAR_THRESHOLD {
                    out.par_iter_mut().enumerate().for_each(|(p, o)| body(p, o, None));
                } else {
                    for (p, o) in out.iter_mut().enumerate() {
                        body(p, o, None);
                    }
                }
            }
        }
    }
}

/// Λ̄ = N(|S|−1) q_max, with q_max the larger of the probed and the
/// on-lattice bound.
pub(crate) fn uniformization_rate(model: &ModelSpec, tab: &Tabulated) -> f64 {
    let n = tab.lattice.n() as f64;
    n * (tab.d as f64 - 1.0) * model.q_max().max(tab.q_max)
}

#[derive(Debug, Clone, Serialize)]
pub struct ValueTable {
    pub lattice: SimplexLattice,
    pub values: Vec<f64>,
    /// Flat per point, per state action index.
    pub policy: Option<Vec<u16>>,
    pub iterations: usize,
    pub lambda_bar: f64,
    pub beta: f64,
    pub tol: f64,
}

impl ValueTable {
    pub fn value_at(&self, mu: &EmpiricalMeasure) -> Option<f64> {
        self.lattice.rank(mu.counts()).map(|r| self.values[r])
    }

    pub fn policy_at(&self, idx: usize) -> Option<&[u16]> {
        let d = self.lattice.num_states();
        self.policy.as_ref().map(|p| &p[idx * d..(idx + 1) * d])
    }
}

fn check_decomposable(model: &ModelSpec) -> Result<()> {
    if model.constraints.is_empty() {
        Ok(())
    } else {
        Err(Error::CoupledConstraints)
    }
}

/// Uniformised Bellman operator:
/// (Tv)(μ) = [Λ̄ v(μ) + Σ_i max_a { μ(i) r(i,a,μ) + Σ_j Nμ(i) q(j|i,a,μ)(v(μ^{i→j}) − v(μ)) }] / (β + Λ̄).
pub fn bellman_operator(model: &ModelSpec, lattice: &SimplexLattice, v: &[f64]) -> Result<(Vec<f64>, Vec<u16>)> {
    if model.beta <= 0.0 {
        return Err(Error::UndiscountedInfinite);
    }
    check_decomposable(model)?;
    if v.len() != lattice.size() {
        return Err(Error::Dimension(format!("{} values for {} lattice points", v.len(), lattice.size())));
    }
    let tab = Tabulated::build(model, lattice.clone());
    let lb = uniformization_rate(model, &tab);
    let mut out = vec![0.0; v.len()];
    let mut pol = vec![0u16; v.len() * tab.d];
    apply_bellman(&tab, model.beta, lb, v, &mut out, Some(&mut pol));
    Ok((out, pol))
}

fn apply_bellman(tab: &Tabulated, beta: f64, lb: f64, v: &[f64], out: &mut [f64], pol: Option<&mut [u16]>) {
    tab.max_generator(v, out, pol);
    for (o, &vp) in out.iter_mut().zip(v) {
        *o = (lb * vp + *o) / (beta + lb);
    }
}

pub const MAX_SWEEPS: usize = 10_000_000;

/// Iterates T from v = 0 until ‖Tv − v‖∞ ≤ tol·β/Λ̄, which puts the result
/// within `tol` of the fixed point.
pub fn value_iteration(model: &ModelSpec, n: u64, tol: f64) -> Result<ValueTable> {
    if model.beta <= 0.0 {
        return Err(Error::UndiscountedInfinite);
    }
    check_decomposable(model)?;
    let lattice = SimplexLattice::enumerate(n, model.num_states())?;
    let tab = Tabulated::build(model, lattice);
    let beta = model.beta;
    let lb = uniformization_rate(model, &tab);
    let threshold = if lb > 0.0 { tol * beta / lb } else { f64::INFINITY };
    let size = tab.size();
    let mut v = vec![0.0; size];
    let mut next = vec![0.0; size];
    let mut iterations = 0;
    loop {
        apply_bellman(&tab, beta, lb, &v, &mut next, None);
        iterations += 1;
        let delta = v.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut v, &mut next);
        if delta <= threshold {
            break;
        }
        if iterations >= MAX_SWEEPS {
            return Err(Error::NotConverged(iterations));
        }
    }
    let mut pol = vec![0u16; size * tab.d];
    tab.max_generator(&v, &mut next, Some(&mut pol));
    Ok(ValueTable {
        lattice: tab.lattice,
        values: v,
        policy: Some(pol),
        iterations,
        lambda_bar: lb,
        beta,
        tol,
    })
}
