//! Adjoint equation and Hamiltonian check for the machine replacement
//! family, where α denotes the probability of "do nothing" for a broken
//! machine and μ the working fraction.

use serde::Serialize;

use super::LimitTrajectory;
use crate::control::{RelaxedControlPath, TimeGrid};
use crate::error::{Error, Result};
use crate::model::ModelSpec;

struct Params {
    c: f64,
    g: f64,
    wb: f64,
    bw: f64,
    per_machine_cost: bool,
}

fn params(model: &ModelSpec) -> Result<Params> {
    if model.name != "machine_replacement" {
        return Err(Error::WrongModelFamily { expected: "machine_replacement", got: model.name.clone() });
    }
    let p = |k: &str| model.param(k).ok_or_else(|| Error::InvalidParameter(format!("missing `{k}`")));
    Ok(Params {
        c: p("C")?,
        g: p("g")?,
        wb: p("lambda_wb")?,
        bw: p("lambda_bw")?,
        per_machine_cost: p("repair_cost_mode")? == 1.0,
    })
}

impl Params {
    /// ṗ as a function of p and α.
    fn dp(&self, p: f64, alpha: f64) -> f64 {
        let base = -self.g + p * (self.wb + self.bw * (1.0 - alpha));
        if self.per_machine_cost {
            base - self.c * (1.0 - alpha)
        } else {
            base
        }
    }

    fn hamiltonian(&self, mu: f64, alpha: f64, p: f64) -> f64 {
        let common = self.g * mu - self.wb * p * mu;
        if self.per_machine_cost {
            (1.0 - alpha) * (1.0 - mu) * (self.bw * p - self.c) + common
        } else {
            (1.0 - alpha) * (self.bw * p * (1.0 - mu) - self.c) + common
        }
    }
}

fn idle_probability(control: &RelaxedControlPath, t: f64) -> f64 {
    control.at(t)[1].weights()[0]
}

#[derive(Debug, Clone, Serialize)]
pub struct Adjoint {
    pub times: Vec<f64>,
    pub p: Vec<f64>,
}

/// Backward RK4 for ṗ = −g + p(λ_wb + λ_bw(1−α)), p(T) = 0 (with the
/// extra −C(1−α) term under the per-machine cost convention).
pub fn adjoint_integrate(model: &ModelSpec, control: &RelaxedControlPath, grid: &TimeGrid) -> Result<Adjoint> {
    let pr = params(model)?;
    let nodes = grid.nodes();
    let mut p = vec![0.0; nodes.len()];
    for k in (1..nodes.len()).rev() {
        let h = nodes[k] - nodes[k - 1];
        let a = idle_probability(control, 0.5 * (nodes[k] + nodes[k - 1]));
        let y = p[k];
        // reversed time: dy/ds = −ṗ
        let f = |y: f64| -pr.dp(y, a);
        let k1 = f(y);
        let k2 = f(y + 0.5 * h * k1);
        let k3 = f(y + 0.5 * h * k2);
        let k4 = f(y + h * k3);
        p[k - 1] = y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    Ok(Adjoint { times: nodes.to_vec(), p })
}

#[derive(Debug, Clone, Serialize)]
pub struct PontryaginResidual {
    pub times: Vec<f64>,
    /// max_α H − H(applied α) per grid node.
    pub values: Vec<f64>,
}

impl PontryaginResidual {
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Maximum over nodes farther than `width` from every switch time.
    pub fn max_away_from(&self, switches: &[f64], width: f64) -> f64 {
        self.times
            .iter()
            .zip(&self.values)
            .filter(|(t, _)| switches.iter().all(|s| (*t - s).abs() > width))
            .map(|(_, v)| *v)
            .fold(0.0, f64::max)
    }
}

/// Since H is affine in α, the maximum over [0, 1] sits at an endpoint.
pub fn pontryagin_residual(
    model: &ModelSpec,
    control: &RelaxedControlPath,
    trajectory: &LimitTrajectory,
    adjoint: &Adjoint,
) -> Result<PontryaginResidual> {
    let pr = params(model)?;
    if trajectory.times.len() != adjoint.times.len()
        || trajectory.times.iter().zip(&adjoint.times).any(|(a, b)| (a - b).abs() > 1e-12)
    {
        return Err(Error::Dimension("trajectory and adjoint must share a grid".into()));
    }
    let times = &trajectory.times;
    let last = times.len() - 1;
    let values = (0..times.len())
        .map(|k| {
            let t = if k == last { 0.5 * (times[last - 1] + times[last]) } else { times[k] };
            let a = idle_probability(control, t);
            let mu = trajectory.states[k][0];
            let p = adjoint.p[k];
            let best = pr.hamiltonian(mu, 0.0, p).max(pr.hamiltonian(mu, 1.0, p));
            (best - pr.hamiltonian(mu, a, p)).max(0.0)
        })
        .collect();
    Ok(PontryaginResidual { times: times.clone(), values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::limit::{default_grid, integrate_limit};
    use crate::model::{reference_control, registry_get, ActionDistribution};
    use std::collections::BTreeMap;
    use std::f64::consts::LN_2;

    fn model(over: &[(&str, f64)]) -> ModelSpec {
        let o: BTreeMap<String, f64> = over.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        registry_get("machine_replacement", &o).unwrap()
    }

    #[test]
    fn zero_g_gives_zero_adjoint() {
        let m = model(&[("g", 0.0)]);
        let c = reference_control(&m).unwrap();
        let grid = default_grid(&m, &c).unwrap();
        let adj = adjoint_integrate(&m, &c, &grid).unwrap();
        assert!(adj.p.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn terminal_linearisation() {
        let m = model(&[]);
        let c = reference_control(&m).unwrap();
        let grid = default_grid(&m, &c).unwrap();
        let adj = adjoint_integrate(&m, &c, &grid).unwrap();
        let k = adj.times.len() - 5;
        let dt = 4.0 - adj.times[k];
        // p(t) = 2(1 − e^{−(T−t)}) with α = 1
        assert!((adj.p[k] - 2.0 * dt).abs() < 2.0 * dt * dt);
        assert!((adj.p[k] - 2.0 * (1.0 - (-dt).exp())).abs() < 1e-12);
    }

    #[test]
    fn three_phase_satisfies_maximum_principle() {
        let m = model(&[]);
        let c = reference_control(&m).unwrap();
        let grid = default_grid(&m, &c).unwrap();
        let tr = integrate_limit(&m, &[1.0, 0.0], &c, &grid).unwrap();
        let adj = adjoint_integrate(&m, &c, &grid).unwrap();
        let res = pontryagin_residual(&m, &c, &tr, &adj).unwrap();
        let h = grid.max_step();
        assert!(res.max_away_from(&[LN_2, 4.0 - LN_2], 1.5 * h) <= 1e-6, "{}", res.max_away_from(&[LN_2, 4.0 - LN_2], 1.5 * h));
    }

    #[test]
    fn always_repair_violates_it_early() {
        let m = model(&[]);
        let prof = vec![ActionDistribution::dirac(1, 0), ActionDistribution::dirac(2, 1)];
        let c = RelaxedControlPath::constant(prof, 4.0).unwrap();
        let grid = default_grid(&m, &c).unwrap();
        let tr = integrate_limit(&m, &[1.0, 0.0], &c, &grid).unwrap();
        let adj = adjoint_integrate(&m, &c, &grid).unwrap();
        let res = pontryagin_residual(&m, &c, &tr, &adj).unwrap();
        for (t, v) in res.times.iter().zip(&res.values) {
            if *t < LN_2 {
                assert!(*v > 0.0, "t = {t}");
            }
        }
    }

    #[test]
    fn expensive_repair_means_idle_is_optimal() {
        let m = model(&[("C", 1e6)]);
        let idle = vec![ActionDistribution::dirac(1, 0), ActionDistribution::dirac(2, 0)];
        let c = RelaxedControlPath::constant(idle, 4.0).unwrap();
        let grid = default_grid(&m, &c).unwrap();
        let tr = integrate_limit(&m, &[1.0, 0.0], &c, &grid).unwrap();
        let adj = adjoint_integrate(&m, &c, &grid).unwrap();
        assert_eq!(pontryagin_residual(&m, &c, &tr, &adj).unwrap().max(), 0.0);
    }

    #[test]
    fn other_models_are_rejected() {
        let m = registry_get("sir_malware", &BTreeMap::new()).unwrap();
        let c = reference_control(&m).unwrap();
        let grid = default_grid(&m, &c).unwrap();
        assert!(matches!(adjoint_integrate(&m, &c, &grid), Err(Error::WrongModelFamily { .. })));
    }
}
