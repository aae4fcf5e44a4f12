//! The deterministic limit problem (F): forward integration under relaxed
//! controls, the objective, the adjoint for machine replacement and two
//! optimizers.

use serde::Serialize;

use crate::control::{RelaxedControlPath, TimeGrid};
use crate::error::{Error, Result};
use crate::model::{check_probability, ActionDistribution, ActionProfile, Horizon, ModelSpec};
use crate::sim::FeedbackRule;

mod optimize;
mod pontryagin;

pub use optimize::{
    optimize_direct, optimize_switching, project_simplex, uniform_segments, DirectOptions, OptimizeDiagnostics, OptimizeResult, SwitchingBounds,
    SwitchingFamily,
};
pub use pontryagin::{adjoint_integrate, pontryagin_residual, Adjoint, PontryaginResidual};

/// Largest clip allowed in a single simplex projection.
pub const PROJECTION_LIMIT: f64 = 1e-6;

/// Default number of RK4 steps over the horizon.
pub const DEFAULT_STEPS: usize = 2000;

/// f_j = Σ_i μ(i) Σ_a q(j|i,a,μ) α^i(a).
pub fn limit_rhs(model: &ModelSpec, mu: &[f64], profile: &[ActionDistribution]) -> Vec<f64> {
    let d = model.num_states();
    let mut out = vec![0.0; d];
    let mut ws = Workspace::new(d);
    rhs_into(model, mu, profile, &mut out, &mut ws);
    out
}

struct Workspace {
    row: Vec<f64>,
    scratch: Vec<f64>,
}

impl Workspace {
    fn new(d: usize) -> Self {
        Self { row: vec![0.0; d], scratch: vec![0.0; d] }
    }
}

fn rhs_into(model: &ModelSpec, mu: &[f64], profile: &[ActionDistribution], out: &mut [f64], ws: &mut Workspace) {
    out.iter_mut().for_each(|x| *x = 0.0);
    for (i, dist) in profile.iter().enumerate() {
        if mu[i] == 0.0 {
            continue;
        }
        model.mixed_row(i, dist, mu, &mut ws.row, &mut ws.scratch);
        for (o, q) in out.iter_mut().zip(&ws.row) {
            *o += mu[i] * q;
        }
    }
}

/// Solution of the limit ODE on a time grid.
#[derive(Debug, Clone, Serialize)]
pub struct LimitTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Largest clip applied by a single projection.
    pub max_projection: f64,
    /// Smallest component seen before projection.
    pub min_component: f64,
}

impl LimitTrajectory {
    /// Linear interpolation between grid nodes; clamped outside.
    pub fn at(&self, t: f64) -> Vec<f64> {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            return self.states[0].clone();
        }
        if k >= self.times.len() {
            return self.states.last().unwrap().clone();
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = (t - t0) / (t1 - t0);
        self.states[k - 1].iter().zip(&self.states[k]).map(|(a, b)| a + w * (b - a)).collect()
    }

    pub fn last(&self) -> &[f64] {
        self.states.last().unwrap()
    }
}

/// Trajectory and objective value of one forward pass.
#[derive(Debug, Clone, Serialize)]
pub struct LimitSolution {
    pub trajectory: LimitTrajectory,
    pub value: f64,
    /// Running reward accumulated up to each node, without the terminal term.
    #[serde(skip)]
    pub(crate) running: Vec<f64>,
}

/// Supplies the profile used on step k = [t_k, t_{k+1}].
trait StepControl {
    fn profile(&mut self, k: usize, t_mid: f64, mu: &[f64]) -> &ActionProfile;
}

struct PathControl<'a>(&'a RelaxedControlPath);

impl StepControl for PathControl<'_> {
    fn profile(&mut self, _k: usize, t_mid: f64, _mu: &[f64]) -> &ActionProfile {
        self.0.at(t_mid)
    }
}

struct FeedbackControl<'a> {
    rule: &'a FeedbackRule,
    used: Vec<ActionProfile>,
}

impl StepControl for FeedbackControl<'_> {
    fn profile(&mut self, _k: usize, _t_mid: f64, mu: &[f64]) -> &ActionProfile {
        self.used.push(self.rule.eval(mu));
        self.used.last().unwrap()
    }
}

/// RK4 on the state augmented with the running discounted reward, then
/// clip-and-renormalise onto the simplex.
fn forward(model: &ModelSpec, mu0: &[f64], grid: &TimeGrid, control: &mut dyn StepControl) -> Result<LimitSolution> {
    check_probability(mu0)?;
    forward_from(model, mu0, 0.0, grid.nodes(), control)
}

/// Continues an integration from `mu0` at `nodes[0]` with `value0` already
/// accumulated. Step indices passed to `control` are relative to `nodes`.
fn forward_from(
    model: &ModelSpec,
    mu0: &[f64],
    value0: f64,
    nodes: &[f64],
    control: &mut dyn StepControl,
) -> Result<LimitSolution> {
    let d = model.num_states();
    if mu0.len() != d {
        return Err(Error::Dimension(format!("initial state over {} states, model has {d}", mu0.len())));
    }
    let beta = model.beta;
    let mut ws = Workspace::new(d);
    let mut mu = mu0.to_vec();
    let mut states = Vec::with_capacity(nodes.len());
    states.push(mu.clone());
    let mut running = Vec::with_capacity(nodes.len());
    running.push(value0);
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut tmp = vec![0.0; d];
    let mut value = value0;
    let mut max_projection = 0.0f64;
    let mut min_component = f64::INFINITY;
    for k in 0..nodes.len() - 1 {
        let (t0, t1) = (nodes[k], nodes[k + 1]);
        let h = t1 - t0;
        let mid = 0.5 * (t0 + t1);
        let prof = control.profile(k, mid, &mu);
        let disc = |t: f64| if beta > 0.0 { (-beta * t).exp() } else { 1.0 };
        let r1 = disc(t0) * model.system_reward(&mu, &prof);
        rhs_into(model, &mu, &prof, &mut k1, &mut ws);
        for j in 0..d {
            tmp[j] = mu[j] + 0.5 * h * k1[j];
        }
        let r2 = disc(mid) * model.system_reward(&tmp, &prof);
        rhs_into(model, &tmp, &prof, &mut k2, &mut ws);
        for j in 0..d {
            tmp[j] = mu[j] + 0.5 * h * k2[j];
        }
        let r3 = disc(mid) * model.system_reward(&tmp, &prof);
        rhs_into(model, &tmp, &prof, &mut k3, &mut ws);
        for j in 0..d {
            tmp[j] = mu[j] + h * k3[j];
        }
        let r4 = disc(t1) * model.system_reward(&tmp, &prof);
        rhs_into(model, &tmp, &prof, &mut k4, &mut ws);
        value += h / 6.0 * (r1 + 2.0 * r2 + 2.0 * r3 + r4);
        for j in 0..d {
            mu[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        let mut clip = 0.0f64;
        for m in mu.iter_mut() {
            min_component = min_component.min(*m);
            if *m < 0.0 {
                clip = clip.max(-*m);
                *m = 0.0;
            }
        }
        if clip > PROJECTION_LIMIT {
            return Err(Error::ProjectionTooLarge { magnitude: clip, time: t1 });
        }
        max_projection = max_projection.max(clip);
        let s: f64 = mu.iter().sum();
        mu.iter_mut().for_each(|m| *m /= s);
        states.push(mu.clone());
        running.push(value);
    }
    if let Horizon::Finite(t) = model.horizon {
        value += (-beta * t).exp() * model.terminal(&mu);
    }
    Ok(LimitSolution {
        trajectory: LimitTrajectory { times: nodes.to_vec(), states, max_projection, min_component },
        value,
        running,
    })
}

fn check_cover(control: &RelaxedControlPath, grid: &TimeGrid) -> Result<()> {
    if control.end() + 1e-12 * grid.end().max(1.0) < grid.end() {
        return Err(Error::HorizonNotCovered { control_end: control.end(), horizon: grid.end() });
    }
    Ok(())
}

/// Integration window for the model: [0, T], or [0, 30/β] when infinite.
pub fn default_grid(model: &ModelSpec, control: &RelaxedControlPath) -> Result<TimeGrid> {
    let end = model.time_end()?;
    TimeGrid::for_control(control, end, end / DEFAULT_STEPS as f64)
}

pub fn integrate_limit(
    model: &ModelSpec,
    mu0: &[f64],
    control: &RelaxedControlPath,
    grid: &TimeGrid,
) -> Result<LimitTrajectory> {
    Ok(solve(model, mu0, control, grid)?.trajectory)
}

/// Trajectory and objective in one pass.
pub fn solve(model: &ModelSpec, mu0: &[f64], control: &RelaxedControlPath, grid: &TimeGrid) -> Result<LimitSolution> {
    check_cover(control, grid)?;
    forward(model, mu0, grid, &mut PathControl(control))
}

/// ∫_0^T e^{−βt} r(μ_t, α_t) dt + e^{−βT} g(μ_T). The running integral is
/// carried as an extra RK4 component on the same grid as the state.
pub fn objective_f(model: &ModelSpec, mu0: &[f64], control: &RelaxedControlPath, grid: &TimeGrid) -> Result<f64> {
    if model.horizon == Horizon::Infinite && model.beta == 0.0 {
        return Err(Error::InfiniteHorizonUntruncated);
    }
    Ok(solve(model, mu0, control, grid)?.value)
}

/// Integrates under a state-feedback rule evaluated at the left end of
/// each step and held over it. Returns the trajectory, its value and the
/// equivalent open-loop control.
pub fn integrate_limit_feedback(
    model: &ModelSpec,
    mu0: &[f64],
    rule: &FeedbackRule,
    grid: &TimeGrid,
) -> Result<(LimitSolution, RelaxedControlPath)> {
    let mut fc = FeedbackControl { rule, used: Vec::with_capacity(grid.steps()) };
    let sol = forward(model, mu0, grid, &mut fc)?;
    let nodes = grid.nodes();
    let mut breaks = Vec::new();
    let mut segs: Vec<ActionProfile> = Vec::new();
    for (k, prof) in fc.used.into_iter().enumerate() {
        if segs.last() != Some(&prof) {
            model.check_profile(&prof)?;
            breaks.push(nodes[k]);
            segs.push(prof);
        }
    }
    let path = RelaxedControlPath::new(breaks, segs, grid.end())?;
    Ok((sol, path))
}
