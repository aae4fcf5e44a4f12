//! Probing checks for (Q1)-(Q3) and finite-difference continuity
//! diagnostics for (Q4)/(Q5).

use serde::Serialize;

use super::ModelSpec;

pub const DEFAULT_PROBE_RESOLUTION: u64 = 8;

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub model: String,
    pub probe_points: usize,
    pub q1_pass: bool,
    /// Most negative off-diagonal entry seen, reported as a positive magnitude.
    pub q1_worst: f64,
    pub q2_pass: bool,
    /// Largest |row sum| seen.
    pub q2_worst: f64,
    pub q3_pass: bool,
    pub q_max: f64,
    pub r_max: f64,
    /// Largest |Δq| / ‖Δμ‖₁ between neighbouring probe points.
    pub q_lipschitz: f64,
    /// Same for the weighted reward μ(i)·r(i,a,μ).
    pub r_lipschitz: f64,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    /// No hard failure among (Q1)-(Q3).
    pub fn passed(&self) -> bool {
        self.q1_pass && self.q2_pass && self.q3_pass
    }
}

/// Vertices, the uniform measure and the lattice P_m(S).
pub fn default_probe_grid(num_states: usize, m: u64) -> Vec<Vec<f64>> {
    let mut grid = Vec::new();
    for i in 0..num_states {
        let mut v = vec![0.0; num_states];
        v[i] = 1.0;
        grid.push(v);
    }
    grid.push(vec![1.0 / num_states as f64; num_states]);
    let mut counts = vec![0u64; num_states];
    lattice_rec(&mut counts, 0, m, &mut |c| {
        grid.push(c.iter().map(|&x| x as f64 / m as f64).collect());
    });
    grid
}

fn lattice_rec(counts: &mut Vec<u64>, pos: usize, left: u64, f: &mut dyn FnMut(&[u64])) {
    if pos + 1 == counts.len() {
        counts[pos] = left;
        f(counts);
        return;
    }
    for c in 0..=left {
        counts[pos] = c;
        lattice_rec(counts, pos + 1, left - c, f);
    }
}

pub(crate) fn probe_q_max(model: &ModelSpec, grid: &[Vec<f64>]) -> f64 {
    let d = model.num_states();
    let mut row = vec![0.0; d];
    let mut q = 0.0f64;
    for mu in grid {
        for i in 0..d {
            for &a in model.actions.actions(i) {
                model.intensity_row(i, a, mu, &mut row);
                for &x in &row {
                    if x.is_nan() {
                        return f64::INFINITY;
                    }
                    q = q.max(x.abs());
                }
            }
        }
    }
    q
}

pub fn validate_assumptions(model: &ModelSpec, probe_grid: &[Vec<f64>], tol: f64) -> ValidationReport {
    let mut rep = core_checks(model, probe_grid, tol);
    lipschitz_diagnostics(model, &mut rep);
    rep
}

/// (Q1)-(Q3) and the reward bound, without the continuity diagnostics.
pub(crate) fn core_checks(model: &ModelSpec, probe_grid: &[Vec<f64>], tol: f64) -> ValidationReport {
    let d = model.num_states();
    let mut row = vec![0.0; d];
    let mut rep = ValidationReport {
        model: model.name.clone(),
        probe_points: probe_grid.len(),
        q1_pass: true,
        q1_worst: 0.0,
        q2_pass: true,
        q2_worst: 0.0,
        q3_pass: true,
        q_max: 0.0,
        r_max: 0.0,
        q_lipschitz: 0.0,
        r_lipschitz: 0.0,
        warnings: Vec::new(),
    };
    for mu in probe_grid {
        for i in 0..d {
            for &a in model.actions.actions(i) {
                model.intensity_row(i, a, mu, &mut row);
                let mut sum = 0.0;
                for (j, &x) in row.iter().enumerate() {
                    if !x.is_finite() {
                        rep.q3_pass = false;
                        rep.q_max = f64::INFINITY;
                        continue;
                    }
                    sum += x;
                    rep.q_max = rep.q_max.max(x.abs());
                    if j != i && x < 0.0 {
                        rep.q1_worst = rep.q1_worst.max(-x);
                    }
                }
                rep.q2_worst = rep.q2_worst.max(sum.abs());
                let r = model.dynamics.weighted_reward(i, a, mu);
                if r.is_finite() {
                    rep.r_max = rep.r_max.max(r.abs());
                } else {
                    rep.warnings.push(format!("non-finite reward at state {i}, action {a}, mu {mu:?}"));
                }
            }
        }
    }
    rep.q1_pass = rep.q1_worst <= tol;
    rep.q2_pass = rep.q2_worst <= tol;
    if !rep.q1_pass {
        rep.warnings.push(format!("(Q1) negative off-diagonal intensity {:e}", -rep.q1_worst));
    }
    if !rep.q2_pass {
        rep.warnings.push(format!("(Q2) row sum off by {:e}", rep.q2_worst));
    }
    rep
}

/// Finite differences between neighbouring points of P_8(S). Only
/// reported; a large value hints at a discontinuity but is not a failure.
fn lipschitz_diagnostics(model: &ModelSpec, rep: &mut ValidationReport) {
    let d = model.num_states();
    let m = DEFAULT_PROBE_RESOLUTION;
    let mut pts: Vec<Vec<u64>> = Vec::new();
    let mut counts = vec![0u64; d];
    lattice_rec(&mut counts, 0, m, &mut |c| pts.push(c.to_vec()));
    let mut r0 = vec![0.0; d];
    let mut r1 = vec![0.0; d];
    let step = 2.0 / m as f64;
    for c in &pts {
        let mu: Vec<f64> = c.iter().map(|&x| x as f64 / m as f64).collect();
        for src in 0..d {
            if c[src] == 0 {
                continue;
            }
            for dst in 0..d {
                if dst == src {
                    continue;
                }
                let mut nu = mu.clone();
                nu[src] -= 1.0 / m as f64;
                nu[dst] += 1.0 / m as f64;
                for i in 0..d {
                    for &a in model.actions.actions(i) {
                        model.intensity_row(i, a, &mu, &mut r0);
                        model.intensity_row(i, a, &nu, &mut r1);
                        let dq = r0.iter().zip(&r1).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                        if dq.is_finite() {
                            rep.q_lipschitz = rep.q_lipschitz.max(dq / step);
                        }
                        let dr = (model.dynamics.weighted_reward(i, a, &mu)
                            - model.dynamics.weighted_reward(i, a, &nu))
                        .abs();
                        if dr.is_finite() {
                            rep.r_lipschitz = rep.r_lipschitz.max(dr / step);
                        }
                    }
                }
            }
        }
    }
    let bound = 1e3 * (1.0 + rep.q_max);
    if rep.q_lipschitz > bound {
        rep.warnings.push(format!("(Q4) steep intensity variation, ratio {:e}", rep.q_lipschitz));
    }
    if rep.r_lipschitz > 1e3 * (1.0 + rep.r_max) {
        rep.warnings.push(format!("(R1) steep reward variation, ratio {:e}", rep.r_lipschitz));
    }
}
