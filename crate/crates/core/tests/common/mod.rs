//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use mfctmdp::exact::SimplexLattice;
use mfctmdp::ModelSpec;

/// Solves A x = b by Gaussian elimination with partial pivoting.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Count vectors adjacent by one agent move, found by search rather than by
/// the rank formula.
pub fn find_point(lattice: &SimplexLattice, counts: &[u32]) -> usize {
    (0..lattice.size()).find(|&p| lattice.point(p) == counts).expect("point on lattice")
}

pub fn fractions(counts: &[u32], n: u64) -> Vec<f64> {
    counts.iter().map(|&c| c as f64 / n as f64).collect()
}

/// Λ̄ = N(|S|−1)·max(probed q_max, largest |q| on the lattice).
pub fn uniformization(model: &ModelSpec, lattice: &SimplexLattice) -> f64 {
    let d = model.num_states();
    let n = lattice.n();
    let mut qm = model.q_max();
    let mut row = vec![0.0; d];
    for p in 0..lattice.size() {
        let mu = fractions(lattice.point(p), n);
        for i in 0..d {
            for &a in model.actions.actions(i) {
                model.intensity_row(i, a, &mu, &mut row);
                qm = row.iter().fold(qm, |m, x| m.max(x.abs()));
            }
        }
    }
    n as f64 * (d as f64 - 1.0) * qm
}

/// Bellman operator by enumerating every product action (a_1, …, a_d).
pub fn brute_force_bellman(model: &ModelSpec, lattice: &SimplexLattice, v: &[f64]) -> Vec<f64> {
    let d = model.num_states();
    let n = lattice.n();
    let lb = uniformization(model, lattice);
    let beta = model.beta;
    let sizes: Vec<usize> = (0..d).map(|i| model.actions.len(i)).collect();
    let total: usize = sizes.iter().product();
    let mut row = vec![0.0; d];
    (0..lattice.size())
        .map(|p| {
            let counts = lattice.point(p).to_vec();
            let mu = fractions(&counts, n);
            let mut best = f64::NEG_INFINITY;
            for code in 0..total {
                let mut c = code;
                let mut val = 0.0;
                for i in 0..d {
                    let k = c % sizes[i];
                    c /= sizes[i];
                    let a = model.actions.actions(i)[k];
                    if counts[i] == 0 {
                        continue;
                    }
                    val += model.dynamics.weighted_reward(i, a, &mu);
                    model.intensity_row(i, a, &mu, &mut row);
                    for j in 0..d {
                        if j == i {
                            continue;
                        }
                        let mut next = counts.clone();
                        next[i] -= 1;
                        next[j] += 1;
                        let q = find_point(lattice, &next);
                        val += counts[i] as f64 * row[j] * (v[q] - v[p]);
                    }
                }
                best = best.max(val);
            }
            (lb * v[p] + best) / (beta + lb)
        })
        .collect()
}

/// Generator of the measure-valued chain of an uncontrolled two-state
/// birth–death model on P_N, with rows indexed like `lattice`.
pub fn birth_death_generator(lattice: &SimplexLattice, up: f64, down: f64) -> Vec<Vec<f64>> {
    let size = lattice.size();
    let mut q = vec![vec![0.0; size]; size];
    for p in 0..size {
        let c = lattice.point(p);
        if c[0] > 0 {
            let to = find_point(lattice, &[c[0] - 1, c[1] + 1]);
            q[p][to] += c[0] as f64 * up;
            q[p][p] -= c[0] as f64 * up;
        }
        if c[1] > 0 {
            let to = find_point(lattice, &[c[0] + 1, c[1] - 1]);
            q[p][to] += c[1] as f64 * down;
            q[p][p] -= c[1] as f64 * down;
        }
    }
    q
}

/// Value of a stationary Markov policy (pure action index per state at
/// each lattice point) by solving (βI − Q)v = r.
pub fn policy_value_linear(model: &ModelSpec, lattice: &SimplexLattice, actions: &dyn Fn(usize) -> Vec<usize>) -> Vec<f64> {
    let d = model.num_states();
    let n = lattice.n();
    let size = lattice.size();
    let mut a = vec![vec![0.0; size]; size];
    let mut r = vec![0.0; size];
    let mut row = vec![0.0; d];
    for p in 0..size {
        a[p][p] += model.beta;
        let counts = lattice.point(p).to_vec();
        let mu = fractions(&counts, n);
        let act = actions(p);
        for i in 0..d {
            if counts[i] == 0 {
                continue;
            }
            let av = model.actions.actions(i)[act[i]];
            r[p] += model.dynamics.weighted_reward(i, av, &mu);
            model.intensity_row(i, av, &mu, &mut row);
            for j in 0..d {
                if j == i {
                    continue;
                }
                let mut next = counts.clone();
                next[i] -= 1;
                next[j] += 1;
                let q = find_point(lattice, &next);
                let rate = counts[i] as f64 * row[j];
                a[p][q] -= rate;
                a[p][p] += rate;
            }
        }
    }
    solve_linear(a, r)
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(|p, q| p.total_cmp(q));
    y.sort_by(|p, q| p.total_cmp(q));
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < x.len() && j < y.len() {
        let t = x[i].min(y[j]);
        while i < x.len() && x[i] <= t {
            i += 1;
        }
        while j < y.len() && y[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / x.len() as f64 - j as f64 / y.len() as f64).abs());
    }
    d
}

/// Kolmogorov–Smirnov statistic of a sample against a continuous CDF.
pub fn ks_against(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut x = sample.to_vec();
    x.sort_by(|p, q| p.total_cmp(q));
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(k, &v)| {
            let f = cdf(v);
            (f - k as f64 / n).abs().max(((k + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}
