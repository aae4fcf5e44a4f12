use serde::Serialize;

use super::{replicate, simulate_with_rng, Policy, Trajectory};
use crate::error::{Error, Result};
use crate::model::{EmpiricalMeasure, Horizon, ModelSpec};

/// ∫ e^{−βt} r(μ_t, α_t) dt over the trajectory window, integrated exactly
/// per constant segment, plus e^{−βT} g(μ_T) for a finite horizon.
pub fn discounted_reward(model: &ModelSpec, traj: &Trajectory) -> Result<f64> {
    let beta = model.beta;
    if model.horizon == Horizon::Infinite && beta == 0.0 {
        return Err(Error::InfiniteHorizonUntruncated);
    }
    let n = traj.n as f64;
    let mut mu = vec![0.0; model.num_states()];
    let mut total = 0.0;
    for (k, seg) in traj.segments.iter().enumerate() {
        let (a, b) = (seg.start, traj.segment_end(k));
        if b <= a {
            continue;
        }
        for (m, &c) in mu.iter_mut().zip(&seg.counts) {
            *m = c as f64 / n;
        }
        let r = model.system_reward(&mu, &seg.control);
        total += if beta > 0.0 {
            r * (-beta * a).exp() * (-(-beta * (b - a)).exp_m1()) / beta
        } else {
            r * (b - a)
        };
    }
    if let Horizon::Finite(t) = model.horizon {
        for (m, &c) in mu.iter_mut().zip(traj.final_counts()) {
            *m = c as f64 / n;
        }
        total += (-beta * t).exp() * model.terminal(&mu);
    }
    Ok(total)
}

#[derive(Debug, Clone, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    /// Standard error of the mean (sample standard deviation / √R).
    pub se: f64,
    pub values: Vec<f64>,
}

impl McEstimate {
    pub fn from_values(values: Vec<f64>) -> Self {
        let r = values.len() as f64;
        let mean = values.iter().sum::<f64>() / r;
        let se = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (r - 1.0);
            (var / r).sqrt()
        } else {
            0.0
        };
        Self { mean, se, values }
    }
}

/// Independent seeded replications of `discounted_reward`.
pub fn monte_carlo_value(
    model: &ModelSpec,
    mu0: &EmpiricalMeasure,
    policy: &Policy,
    replications: usize,
    seed: u64,
) -> Result<McEstimate> {
    if replications == 0 {
        return Err(Error::InvalidParameter("replications must be >= 1".into()));
    }
    let values = replicate(replications, seed, |rng| {
        let tr = simulate_with_rng(model, mu0, policy, rng)?;
        discounted_reward(model, &tr)
    })?;
    Ok(McEstimate::from_values(values))
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleResidual {
    pub state: usize,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// M_t(j) = μ_t(j) − μ_0(j) − ∫_0^t Σ_i μ_s(i) ∫ q(j|i,a,μ_s) α_s^i(da) ds,
/// with the drift integrated exactly on each constant segment.
pub fn martingale_residual(
    model: &ModelSpec,
    traj: &Trajectory,
    j: usize,
    sample_times: &[f64],
) -> Result<MartingaleResidual> {
    let d = model.num_states();
    if j >= d {
        return Err(Error::Dimension(format!("state {j} out of range")));
    }
    if sample_times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("sample times must be sorted".into()));
    }
    if sample_times.iter().any(|&t| t < 0.0 || t > traj.end) {
        return Err(Error::InvalidParameter("sample time outside the trajectory window".into()));
    }
    let n = traj.n as f64;
    let (mut row, mut scratch) = (vec![0.0; d], vec![0.0; d]);
    let mut mu = vec![0.0; d];
    let mut drift = |k: usize| -> f64 {
        let seg = &traj.segments[k];
        for (m, &c) in mu.iter_mut().zip(&seg.counts) {
            *m = c as f64 / n;
        }
        let mut f = 0.0;
        for i in 0..d {
            if seg.counts[i] == 0 {
                continue;
            }
            model.mixed_row(i, &seg.control[i], &mu, &mut row, &mut scratch);
            f += mu[i] * row[j];
        }
        f
    };
    let mu0 = traj.segments[0].counts[j] as f64 / n;
    let mut k = 0;
    let mut drift_k = drift(0);
    let mut integral = 0.0;
    let mut values = Vec::with_capacity(sample_times.len());
    for &t in sample_times {
        while k + 1 < traj.segments.len() && traj.segments[k + 1].start <= t {
            integral += drift_k * (traj.segments[k + 1].start - traj.segments[k].start);
            k += 1;
            drift_k = drift(k);
        }
        let now = traj.segments[k].counts[j] as f64 / n;
        values.push(now - mu0 - (integral + drift_k * (t - traj.segments[k].start)));
    }
    Ok(MartingaleResidual { state: j, times: sample_times.to_vec(), values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::RelaxedControlPath;
    use crate::model::{fixtures, registry_get, ActionDistribution};
    use crate::sim::simulate;
    use std::collections::BTreeMap;

    #[test]
    fn geometric_integral() {
        let m = fixtures::frozen(vec![1.0], 1.0, Horizon::Infinite).unwrap();
        let mu = EmpiricalMeasure::new(vec![3]).unwrap();
        let p = RelaxedControlPath::constant(m.default_profile(), 30.0).unwrap();
        let tr = simulate(&m, &mu, &Policy::OpenLoop(p), 0).unwrap();
        let v = discounted_reward(&m, &tr).unwrap();
        assert!((v - 1.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn rectangle_without_jumps() {
        let m = registry_get("machine_replacement", &BTreeMap::new()).unwrap();
        let mu = EmpiricalMeasure::new(vec![1, 0]).unwrap();
        let prof = vec![ActionDistribution::dirac(1, 0), ActionDistribution::dirac(2, 0)];
        let tr = Trajectory {
            n: 1,
            segments: vec![super::super::Segment {
                start: 0.0,
                counts: mu.counts().to_vec(),
                control: std::sync::Arc::new(prof),
                jump: false,
            }],
            end: 4.0,
        };
        assert_eq!(discounted_reward(&m, &tr).unwrap(), 8.0);
    }

    #[test]
    fn zero_reward_mc() {
        let m = registry_get("cube_root", &BTreeMap::new()).unwrap();
        let mu = EmpiricalMeasure::new(vec![1, 9]).unwrap();
        let p = RelaxedControlPath::constant(m.default_profile(), 2.0).unwrap();
        let est = monte_carlo_value(&m, &mu, &Policy::OpenLoop(p), 5, 1).unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.se, 0.0);
        assert_eq!(est.values, vec![0.0; 5]);
    }

    #[test]
    fn residual_of_frozen_model_is_zero() {
        let m = fixtures::frozen(vec![0.0, 1.0], 1.0, Horizon::Infinite).unwrap();
        let mu = EmpiricalMeasure::new(vec![2, 3]).unwrap();
        let p = RelaxedControlPath::constant(m.default_profile(), 30.0).unwrap();
        let tr = simulate(&m, &mu, &Policy::OpenLoop(p), 0).unwrap();
        let r = martingale_residual(&m, &tr, 1, &[0.0, 1.0, 5.0]).unwrap();
        assert_eq!(r.values, vec![0.0; 3]);
    }

    #[test]
    fn residual_jumps_are_one_over_n() {
        let m = registry_get("machine_replacement", &BTreeMap::new()).unwrap();
        let path = crate::model::reference_control(&m).unwrap();
        let mu = EmpiricalMeasure::new(vec![40, 0]).unwrap();
        let tr = simulate(&m, &mu, &Policy::OpenLoop(path), 5).unwrap();
        for t in tr.jump_times().into_iter().take(20) {
            let eps = 1e-12;
            let r = martingale_residual(&m, &tr, 0, &[t - eps, t]).unwrap();
            let jump = (r.values[1] - r.values[0]).abs();
            assert!((jump - 1.0 / 40.0).abs() < 1e-9, "{jump}");
        }
    }
}
