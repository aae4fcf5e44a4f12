//! Backward RK4 integration of the finite-horizon Bellman dynamics
//! dv/dt = βv − max_α [ r(μ,α) + Σ_ν q(ν|μ,α)(v(ν) − v(μ)) ], v(T) = g.

use rayon::prelude::*;
use serde::Serialize;

use super::{check_decomposable, SimplexLattice, Tabulated, PAR_THRESHOLD};
use crate::control::TimeGrid;
use crate::error::{Error, Result};
use crate::model::{ActionProfile, EmpiricalMeasure, ModelSpec};
use crate::sim::Policy;

/// Policy tables are kept only below this many entries.
const POLICY_RECORD_CAP: usize = 20_000_000;

#[derive(Debug, Clone, Serialize)]
pub struct TimeValueTable {
    pub lattice: SimplexLattice,
    pub times: Vec<f64>,
    /// v(0, ·).
    pub values: Vec<f64>,
    /// v(T, ·) = g.
    pub terminal: Vec<f64>,
    /// For each grid interval, flat per point, per state argmax indices
    /// (optimal solve only, and only when small enough to store).
    #[serde(skip)]
    pub policy: Option<Vec<Vec<u16>>>,
    pub step_bound: f64,
}

impl TimeValueTable {
    pub fn value_at(&self, mu: &EmpiricalMeasure) -> Option<f64> {
        self.lattice.rank(mu.counts()).map(|r| self.values[r])
    }
}

enum Generator<'a> {
    Optimal,
    OpenLoop(&'a crate::control::RelaxedControlPath),
    Feedback(Vec<ActionProfile>),
}

fn prepare(model: &ModelSpec, n: u64, grid: &TimeGrid) -> Result<(Tabulated, f64, f64)> {
    let t_end = model.horizon.finite().ok_or(Error::FiniteHorizonRequired)?;
    if (grid.end() - t_end).abs() > 1e-9 * t_end.max(1.0) {
        return Err(Error::InvalidParameter(format!("time grid ends at {}, horizon is {t_end}", grid.end())));
    }
    let lattice = SimplexLattice::enumerate(n, model.num_states())?;
    let h = grid.max_step();
    let bound = n as f64 * (model.num_states() as f64 - 1.0) * model.q_max();
    let product = h * bound;
    if product > 0.5 {
        return Err(Error::StepTooLarge { step: h, product });
    }
    let tab = Tabulated::build(model, lattice);
    Ok((tab, t_end, product))
}

/// Σ_i (max or mix over α^i) of the reward plus generator term, into `out`.
fn generator(tab: &Tabulated, gen: &Generator, t_mid: f64, v: &[f64], out: &mut [f64], pol: Option<&mut [u16]>) {
    match gen {
        Generator::Optimal => tab.max_generator(v, out, pol),
        Generator::OpenLoop(path) => {
            let prof = path.at(t_mid);
            let f = |p: usize| tab.profile_value(p, prof, v);
            fill(out, f);
        }
        Generator::Feedback(profiles) => {
            let f = |p: usize| tab.profile_value(p, &profiles[p], v);
            fill(out, f);
        }
    }
}

fn fill(out: &mut [f64], f: impl Fn(usize) -> f64 + Sync) {
    if out.len() > PAR_THRESHOLD {
        out.par_iter_mut().enumerate().for_each(|(p, o)| *o = f(p));
    } else {
        out.iter_mut().enumerate().for_each(|(p, o)| *o = f(p));
    }
}

fn integrate(model: &ModelSpec, tab: Tabulated, grid: &TimeGrid, gen: Generator, step_bound: f64) -> TimeValueTable {
    let beta = model.beta;
    let size = tab.size();
    let d = tab.d;
    let terminal: Vec<f64> = (0..size).map(|p| model.terminal(&tab.lattice.fractions(p))).collect();
    let mut v = terminal.clone();
    let nodes = grid.nodes();
    let record = matches!(gen, Generator::Optimal) && size * d * grid.steps() <= POLICY_RECORD_CAP;
    let mut policy: Vec<Vec<u16>> = Vec::new();
    let mut k1 = vec![0.0; size];
    let mut k2 = vec![0.0; size];
    let mut k3 = vec![0.0; size];
    let mut k4 = vec![0.0; size];
    let mut tmp = vec![0.0; size];
    let mut g = vec![0.0; size];
    // In reversed time s = T − t the equation reads dv/ds = G(v) − βv.
    let rhs = |v: &[f64], g: &mut [f64], out: &mut [f64], pol: Option<&mut [u16]>, t_mid: f64| {
        generator(&tab, &gen, t_mid, v, g, pol);
        for ((o, gi), vi) in out.iter_mut().zip(g.iter()).zip(v) {
            *o = gi - beta * vi;
        }
    };
    for k in (1..nodes.len()).rev() {
        let h = nodes[k] - nodes[k - 1];
        let mid = 0.5 * (nodes[k] + nodes[k - 1]);
        rhs(&v, &mut g, &mut k1, None, mid);
        for p in 0..size {
            tmp[p] = v[p] + 0.5 * h * k1[p];
        }
        let mut pol = if record { Some(vec![0u16; size * d]) } else { None };
        rhs(&tmp, &mut g, &mut k2, pol.as_deref_mut(), mid);
        if let Some(pol) = pol {
            policy.push(pol);
        }
        for p in 0..size {
            tmp[p] = v[p] + 0.5 * h * k2[p];
        }
        rhs(&tmp, &mut g, &mut k3, None, mid);
        for p in 0..size {
            tmp[p] = v[p] + h * k3[p];
        }
        rhs(&tmp, &mut g, &mut k4, None, mid);
        for p in 0..size {
            v[p] += h / 6.0 * (k1[p] + 2.0 * k2[p] + 2.0 * k3[p] + k4[p]);
        }
    }
    policy.reverse();
    TimeValueTable {
        lattice: tab.lattice,
        times: nodes.to_vec(),
        values: v,
        terminal,
        policy: if record { Some(policy) } else { None },
        step_bound,
    }
}

/// Optimal finite-horizon values v(0, ·) on P_N(S).
pub fn finite_horizon_solve(model: &ModelSpec, n: u64, grid: &TimeGrid) -> Result<TimeValueTable> {
    check_decomposable(model)?;
    let (tab, _, bound) = prepare(model, n, grid)?;
    Ok(integrate(model, tab, grid, Generator::Optimal, bound))
}

/// Expected discounted reward of a fixed open-loop or feedback policy, by
/// the linear version of the same equation.
pub fn policy_evaluation(model: &ModelSpec, n: u64, policy: &Policy, grid: &TimeGrid) -> Result<TimeValueTable> {
    let (tab, t_end, bound) = prepare(model, n, grid)?;
    let gen = match policy {
        Policy::OpenLoop(path) => {
            if path.end() + 1e-12 * t_end.max(1.0) < t_end {
                return Err(Error::HorizonNotCovered { control_end: path.end(), horizon: t_end });
            }
            for prof in path.segments() {
                model.check_profile(prof)?;
            }
            Generator::OpenLoop(path)
        }
        Policy::Feedback(rule) => {
            let profiles: Vec<ActionProfile> =
                (0..tab.size()).map(|p| rule.eval(&tab.lattice.fractions(p))).collect();
            for prof in &profiles {
                model.check_profile(prof)?;
            }
            Generator::Feedback(profiles)
        }
        Policy::JumpAdapted { .. } => {
            return Err(Error::UnsupportedPolicy(
                "jump-adapted policies are not Markov in the measure alone".into(),
            ))
        }
    };
    Ok(integrate(model, tab, grid, gen, bound))
}
