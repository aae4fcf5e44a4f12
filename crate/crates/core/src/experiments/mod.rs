//! Scripted studies comparing the N-agent system with its limit.

use crate::limit::LimitTrajectory;
use crate::sim::Trajectory;

mod equivalence;
mod feedback;
mod figures;
mod nonuniqueness;
mod rate;

pub use equivalence::{equivalence_study, EquivalenceReport};
pub use feedback::{
    feedback_nonconvergence_demo, fluid_priority_rule, priority_rule, FeedbackDemo, FeedbackDemoRow,
};
pub use figures::{replicate_figures, FIGURE_EXAMPLES};
pub use nonuniqueness::{cube_root_branch, cube_root_distance, nonuniqueness_demo, parity_start, NonuniquenessReport};
pub use rate::{loglog_slope, rate_study, RateMode, RateRow, RateStudyResult};

/// Number of time nodes used for path distances.
pub const PATH_GRID_POINTS: usize = 200;

/// `points` equally spaced nodes on [0, end], both ends included.
pub fn sample_times(end: f64, points: usize) -> Vec<f64> {
    (0..points).map(|k| if k + 1 == points { end } else { end * k as f64 / (points - 1) as f64 }).collect()
}

/// Total variation distance ½‖μ − ν‖₁.
pub fn tv_distance(mu: &[f64], nu: &[f64]) -> f64 {
    0.5 * mu.iter().zip(nu).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// sup over [`PATH_GRID_POINTS`] nodes on [0, end] of the TV distance
/// between a simulated path and a limit trajectory.
pub fn sup_tv_distance(traj: &Trajectory, limit: &LimitTrajectory, end: f64) -> f64 {
    sample_times(end, PATH_GRID_POINTS)
        .into_iter()
        .map(|t| tv_distance(&traj.fractions_at(t), &limit.at(t)))
        .fold(0.0, f64::max)
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
