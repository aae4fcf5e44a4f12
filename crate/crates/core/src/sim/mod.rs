//! Exact event-driven simulation of the N-agent system.
//!
//! Sojourn times are drawn by inverse CDF, the transition by a linear scan
//! over the (i, j) rate list. Control re-reads that fall between two jumps
//! split the exponential clock, which is exact by memorylessness.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::control::RelaxedControlPath;
use crate::error::{Error, Result};
use crate::model::{ActionDistribution, ActionProfile, EmpiricalMeasure, ModelSpec};

mod joint;
mod stats;

pub use joint::{aggregated_joint_rates, simulate_joint, simulate_joint_with_rng, JointRule};
pub use stats::{discounted_reward, martingale_residual, monte_carlo_value, McEstimate, MartingaleResidual};

type FeedbackFn = dyn Fn(&[f64]) -> ActionProfile + Send + Sync;

/// A state-feedback rule μ ↦ per-state action distributions.
#[derive(Clone)]
pub struct FeedbackRule {
    pub name: String,
    f: Arc<FeedbackFn>,
}

impl FeedbackRule {
    pub fn new(name: impl Into<String>, f: impl Fn(&[f64]) -> ActionProfile + Send + Sync + 'static) -> Self {
        Self { name: name.into(), f: Arc::new(f) }
    }

    pub fn eval(&self, mu: &[f64]) -> ActionProfile {
        (self.f)(mu)
    }
}

impl fmt::Debug for FeedbackRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FeedbackRule({})", self.name)
    }
}

#[derive(Debug, Clone)]
pub enum Policy {
    /// Follows the path; re-read at every jump and every breakpoint.
    OpenLoop(RelaxedControlPath),
    Feedback(FeedbackRule),
    /// Re-read only at jumps and at the listed discontinuity times of the
    /// path; frozen in between.
    JumpAdapted { path: RelaxedControlPath, discontinuities: Vec<f64> },
}

impl Policy {
    /// Jump-adapted policy whose discontinuities are the breakpoints where
    /// the path changes.
    pub fn jump_adapted(path: RelaxedControlPath) -> Self {
        let discontinuities = path.discontinuities();
        Policy::JumpAdapted { path, discontinuities }
    }

    fn check_covers(&self, end: f64) -> Result<()> {
        let path = match self {
            Policy::OpenLoop(p) | Policy::JumpAdapted { path: p, .. } => p,
            Policy::Feedback(_) => return Ok(()),
        };
        if path.end() + 1e-12 * end.max(1.0) < end {
            return Err(Error::HorizonNotCovered { control_end: path.end(), horizon: end });
        }
        Ok(())
    }

    /// The next scheduled control re-read strictly after `t`.
    fn next_reread(&self, t: f64) -> Option<f64> {
        match self {
            Policy::OpenLoop(p) => p.next_breakpoint(t),
            Policy::JumpAdapted { discontinuities, .. } => {
                let k = discontinuities.partition_point(|&b| b <= t);
                discontinuities.get(k).copied()
            }
            Policy::Feedback(_) => None,
        }
    }
}

/// Hands out shared control profiles without re-allocating per event.
struct ControlSource<'a> {
    policy: &'a Policy,
    cached: Vec<Arc<ActionProfile>>,
}

impl<'a> ControlSource<'a> {
    fn new(policy: &'a Policy) -> Self {
        let cached = match policy {
            Policy::OpenLoop(p) | Policy::JumpAdapted { path: p, .. } => {
                p.segments().iter().cloned().map(Arc::new).collect()
            }
            Policy::Feedback(_) => Vec::new(),
        };
        Self { policy, cached }
    }

    fn at(&self, t: f64, mu: &[f64]) -> Arc<ActionProfile> {
        match self.policy {
            Policy::OpenLoop(p) | Policy::JumpAdapted { path: p, .. } => self.cached[p.segment_index(t)].clone(),
            Policy::Feedback(rule) => Arc::new(rule.eval(mu)),
        }
    }
}

/// One constant piece [start, next start) of a trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct Segment {
    pub start: f64,
    pub counts: Vec<u64>,
    pub control: Arc<ActionProfile>,
    /// True when the segment begins with an agent transition, false for the
    /// initial segment and control re-reads.
    pub jump: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub n: u64,
    pub segments: Vec<Segment>,
    pub end: f64,
}

impl Trajectory {
    pub fn jump_times(&self) -> Vec<f64> {
        self.segments.iter().filter(|s| s.jump).map(|s| s.start).collect()
    }

    pub fn num_jumps(&self) -> usize {
        self.segments.iter().filter(|s| s.jump).count()
    }

    /// Index of the segment holding at time t (càdlàg).
    pub fn segment_index(&self, t: f64) -> usize {
        self.segments.partition_point(|s| s.start <= t).saturating_sub(1)
    }

    pub fn counts_at(&self, t: f64) -> &[u64] {
        &self.segments[self.segment_index(t)].counts
    }

    pub fn fractions_at(&self, t: f64) -> Vec<f64> {
        let n = self.n as f64;
        self.counts_at(t).iter().map(|&c| c as f64 / n).collect()
    }

    pub fn final_counts(&self) -> &[u64] {
        &self.segments.last().unwrap().counts
    }

    /// End time of segment k.
    pub fn segment_end(&self, k: usize) -> f64 {
        self.segments.get(k + 1).map_or(self.end, |s| s.start)
    }
}

/// RNG for replication `rep` of a run seeded with `seed`: one ChaCha
/// stream per replication.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Runs `reps` independent replications in parallel; results are returned
/// in replication order.
pub fn replicate<T, F>(reps: usize, seed: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng) -> Result<T> + Sync,
{
    (0..reps)
        .into_par_iter()
        .map(|r| f(&mut replication_rng(seed, r as u64)))
        .collect()
}

/// Exp(total) by inverse CDF.
pub(crate) fn sample_exp<R: Rng + ?Sized>(rng: &mut R, total: f64) -> f64 {
    let u: f64 = rng.gen();
    -(1.0 - u).ln() / total
}

/// Fills `out` with (i, j, rate) for every i ≠ j with a positive rate and
/// returns the total exit rate.
pub(crate) fn fill_rates(
    model: &ModelSpec,
    counts: &[u64],
    mu: &[f64],
    profile: &[ActionDistribution],
    out: &mut Vec<(usize, usize, f64)>,
    row: &mut [f64],
    scratch: &mut [f64],
) -> f64 {
    out.clear();
    let mut total = 0.0;
    for (i, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        model.mixed_row(i, &profile[i], mu, row, scratch);
        for (j, &q) in row.iter().enumerate() {
            if j != i && q > 0.0 {
                let r = c as f64 * q;
                out.push((i, j, r));
                total += r;
            }
        }
    }
    total
}

/// q(μ^{i→j}|μ,α) = Nμ(i) ∫ q(j|i,a,μ) α^i(da) for every i ≠ j with a
/// positive rate, in lexicographic (i, j) order.
pub fn system_rates(model: &ModelSpec, mu: &EmpiricalMeasure, profile: &[ActionDistribution]) -> Vec<(usize, usize, f64)> {
    let d = model.num_states();
    let mut out = Vec::new();
    let (mut row, mut scratch) = (vec![0.0; d], vec![0.0; d]);
    fill_rates(model, mu.counts(), &mu.fractions(), profile, &mut out, &mut row, &mut scratch);
    out
}

pub(crate) fn pick<R: Rng + ?Sized>(rng: &mut R, rates: &[(usize, usize, f64)], total: f64) -> (usize, usize) {
    let target = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for &(i, j, r) in rates {
        acc += r;
        if target < acc {
            return (i, j);
        }
    }
    let last = rates.last().expect("pick from an empty rate list");
    (last.0, last.1)
}

pub fn simulate(model: &ModelSpec, mu0: &EmpiricalMeasure, policy: &Policy, seed: u64) -> Result<Trajectory> {
    simulate_with_rng(model, mu0, policy, &mut replication_rng(seed, 0))
}

pub fn simulate_with_rng<R: Rng + ?Sized>(
    model: &ModelSpec,
    mu0: &EmpiricalMeasure,
    policy: &Policy,
    rng: &mut R,
) -> Result<Trajectory> {
    let d = model.num_states();
    if mu0.num_states() != d {
        return Err(Error::Dimension(format!("measure over {} states, model has {d}", mu0.num_states())));
    }
    let end = model.time_end()?;
    policy.check_covers(end)?;
    let n = mu0.n();
    let nf = n as f64;
    let source = ControlSource::new(policy);

    let mut counts = mu0.counts().to_vec();
    let mut mu: Vec<f64> = counts.iter().map(|&c| c as f64 / nf).collect();
    let mut t = 0.0;
    let mut control = source.at(0.0, &mu);
    if let Policy::Feedback(_) = policy {
        model.check_profile(&control)?;
    }
    let mut segments = vec![Segment { start: 0.0, counts: counts.clone(), control: control.clone(), jump: false }];

    let mut rates = Vec::with_capacity(d * d);
    let (mut row, mut scratch) = (vec![0.0; d], vec![0.0; d]);
    loop {
        let total = fill_rates(model, &counts, &mu, &control, &mut rates, &mut row, &mut scratch);
        let stop = policy.next_reread(t).map_or(end, |b| b.min(end));
        let tau = if total > 0.0 { sample_exp(rng, total) } else { f64::INFINITY };
        if t + tau < stop {
            t += tau;
            let (i, j) = pick(rng, &rates, total);
            counts[i] -= 1;
            counts[j] += 1;
            mu[i] = counts[i] as f64 / nf;
            mu[j] = counts[j] as f64 / nf;
            control = source.at(t, &mu);
            segments.push(Segment { start: t, counts: counts.clone(), control: control.clone(), jump: true });
        } else {
            t = stop;
            if t >= end {
                break;
            }
            let next = source.at(t, &mu);
            if !Arc::ptr_eq(&next, &control) {
                control = next;
                segments.push(Segment { start: t, counts: counts.clone(), control: control.clone(), jump: false });
            }
        }
    }
    Ok(Trajectory { n, segments, end })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::registry_get;
    use std::collections::BTreeMap;

    #[test]
    fn machine_replacement_repair_rate() {
        let m = registry_get("machine_replacement", &BTreeMap::new()).unwrap();
        let mu = EmpiricalMeasure::new(vec![5, 5]).unwrap();
        let prof = vec![ActionDistribution::dirac(1, 0), ActionDistribution::dirac(2, 1)];
        let rates = system_rates(&m, &mu, &prof);
        assert_eq!(rates, vec![(0, 1, 5.0), (1, 0, 10.0)]);
    }

    #[test]
    fn cube_root_even_start_is_frozen() {
        let m = registry_get("cube_root", &BTreeMap::new()).unwrap();
        let mu = EmpiricalMeasure::new(vec![0, 100]).unwrap();
        assert!(system_rates(&m, &mu, &m.default_profile()).is_empty());
        let path = crate::model::reference_control(&m).unwrap();
        let tr = simulate(&m, &mu, &Policy::OpenLoop(path), 1).unwrap();
        assert_eq!(tr.num_jumps(), 0);
        assert_eq!(tr.final_counts(), &[0, 100]);
    }

    #[test]
    fn short_policy_is_rejected() {
        let m = registry_get("machine_replacement", &BTreeMap::new()).unwrap();
        let path = RelaxedControlPath::constant(m.default_profile(), 3.0).unwrap();
        let mu = EmpiricalMeasure::new(vec![10, 0]).unwrap();
        assert!(matches!(
            simulate(&m, &mu, &Policy::OpenLoop(path), 0),
            Err(Error::HorizonNotCovered { .. })
        ));
    }

    #[test]
    fn same_seed_same_path() {
        let m = registry_get("machine_replacement", &BTreeMap::new()).unwrap();
        let path = crate::model::reference_control(&m).unwrap();
        let mu = EmpiricalMeasure::new(vec![50, 0]).unwrap();
        let a = simulate(&m, &mu, &Policy::OpenLoop(path.clone()), 9).unwrap();
        let b = simulate(&m, &mu, &Policy::OpenLoop(path), 9).unwrap();
        assert_eq!(a.jump_times(), b.jump_times());
    }

    #[test]
    fn breakpoints_appear_as_control_segments() {
        let m = registry_get("machine_replacement", &BTreeMap::new()).unwrap();
        let path = crate::model::reference_control(&m).unwrap();
        let mu = EmpiricalMeasure::new(vec![20, 0]).unwrap();
        let tr = simulate(&m, &mu, &Policy::OpenLoop(path.clone()), 3).unwrap();
        for &b in &path.breakpoints()[1..] {
            assert!(tr.segments.iter().any(|s| !s.jump && s.start == b));
        }
        for w in tr.segments.windows(2) {
            let moved: u64 = w[0].counts.iter().zip(&w[1].counts).map(|(a, b)| a.abs_diff(*b)).sum();
            assert_eq!(moved, if w[1].jump { 2 } else { 0 });
        }
    }
}
