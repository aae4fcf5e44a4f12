//! The cube-root model: with no agent in state "1" the empirical path stays
//! at 0, with one agent it follows the branch (2t/3)^{3/2}.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::{sampled_table, StudyFile};
use crate::model::{EmpiricalMeasure, ModelSpec};
use crate::sim::{simulate, Policy, Trajectory};
use crate::RelaxedControlPath;

use super::sample_times;

/// The nonzero solution μ(1) = (2t/3)^{3/2}.
pub fn cube_root_branch(t: f64) -> f64 {
    (2.0 * t / 3.0).powf(1.5)
}

/// Exact sup over [0, t_max] of |μ_t^N(state) − (2t/3)^{3/2}|. The path is
/// constant between jumps and the branch is increasing, so each piece is
/// checked at its two ends.
pub fn cube_root_distance(traj: &Trajectory, state: usize, t_max: f64) -> f64 {
    let n = traj.n as f64;
    let mut sup = 0.0f64;
    for (k, seg) in traj.segments.iter().enumerate() {
        if seg.start > t_max {
            break;
        }
        let stop = traj.segment_end(k).min(t_max);
        let c = seg.counts[state] as f64 / n;
        sup = sup.max((c - cube_root_branch(seg.start)).abs()).max((c - cube_root_branch(stop)).abs());
    }
    sup
}

#[derive(Debug, Clone, Serialize)]
pub struct NonuniquenessReport {
    pub n_even: u64,
    pub n_odd: u64,
    /// sup_t μ_t^N(1) on the even path (0 iff it never leaves 0).
    pub even_sup: f64,
    pub even_identically_zero: bool,
    pub t_max: f64,
    /// sup over [0, t_max] of the odd path's distance to the branch.
    pub odd_distance: f64,
    #[serde(skip)]
    pub even_path: Option<Trajectory>,
    #[serde(skip)]
    pub odd_path: Option<Trajectory>,
}

impl NonuniquenessReport {
    /// Both paths sampled on 1001 nodes, with the branch for reference.
    pub fn files(&self, model: &ModelSpec) -> Vec<StudyFile> {
        let end = model.time_end().unwrap_or(self.t_max);
        let times = sample_times(end, 1001);
        let labels = model.states.labels();
        let mut out = Vec::new();
        for (n, path) in [(self.n_even, &self.even_path), (self.n_odd, &self.odd_path)] {
            if let Some(p) = path {
                let mut table = sampled_table(p, labels, &times);
                table.header.push("branch".into());
                for row in table.rows.iter_mut() {
                    let b = cube_root_branch(row[0]).min(1.0);
                    row.push(b);
                }
                out.push(StudyFile { tag: n.to_string(), table });
            }
        }
        out
    }
}

/// Initial counts of the construction: one agent in state "1" iff N is
/// odd.
pub fn parity_start(n: u64) -> Result<EmpiricalMeasure> {
    let ones = n % 2;
    EmpiricalMeasure::new(vec![ones, n - ones])
}

/// Simulates the cube-root model once for an even and an odd N.
pub fn nonuniqueness_demo(model: &ModelSpec, n_even: u64, n_odd: u64, t_max: f64, seed: u64) -> Result<NonuniquenessReport> {
    if model.name != "cube_root" {
        return Err(Error::WrongModelFamily { expected: "cube_root", got: model.name.clone() });
    }
    if n_even == 0 || n_even % 2 != 0 || n_odd % 2 != 1 {
        return Err(Error::InvalidParameter(format!("need an even and an odd N, got {n_even} and {n_odd}")));
    }
    let end = model.time_end()?;
    if !(t_max > 0.0 && t_max <= end) {
        return Err(Error::InvalidParameter(format!("t_max = {t_max} outside (0, {end}]")));
    }
    let policy = Policy::OpenLoop(RelaxedControlPath::constant(model.default_profile(), end)?);
    let even = simulate(model, &parity_start(n_even)?, &policy, seed)?;
    let odd = simulate(model, &parity_start(n_odd)?, &policy, seed.wrapping_add(1))?;
    let even_sup = even.segments.iter().map(|s| s.counts[0] as f64 / n_even as f64).fold(0.0, f64::max);
    Ok(NonuniquenessReport {
        n_even,
        n_odd,
        even_sup,
        even_identically_zero: even.segments.iter().all(|s| s.counts[0] == 0),
        t_max,
        odd_distance: cube_root_distance(&odd, 0, t_max),
        even_path: Some(even),
        odd_path: Some(odd),
    })
}
