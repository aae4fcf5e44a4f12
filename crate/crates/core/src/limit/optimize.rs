//! Two optimizers for the limit problem: a nested grid / golden-section
//! search over low-dimensional switching families, and projected gradient
//! ascent on piecewise-constant relaxed controls.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};

use log::debug;
use rayon::prelude::*;
use serde::Serialize;

use super::{forward_from, solve, LimitTrajectory, PathControl, DEFAULT_STEPS};
use crate::control::{RelaxedControlPath, TimeGrid};
use crate::error::{Error, Result};
use crate::model::{ActionDistribution, ActionProfile, ModelSpec};

/// Coarse grid size per parameter before golden-section refinement.
pub const COARSE_POINTS: usize = 11;
/// Grid size used when the coarse grid is not unimodal.
pub const DENSE_POINTS: usize = 101;

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Parametric control families with at most three scalar parameters. All
/// other states keep action index 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum SwitchingFamily {
    /// `before` on [0, t1), `after` on [t1, T]. Parameters: (t1).
    OneSwitch { state: usize, before: usize, after: usize },
    /// `idle` on [0, t1), weight u on `active` and 1 − u on `idle` on
    /// [t1, t2), `idle` on [t2, T]. Parameters: (t1, u, t2).
    ThreePhase { state: usize, idle: usize, active: usize },
}

impl SwitchingFamily {
    /// Family by name for a registry model: the controlled state is the
    /// first one with more than one action, switching from the first to the
    /// last action of its grid.
    pub fn for_model(model: &ModelSpec, name: &str) -> Result<Self> {
        let state = (0..model.num_states())
            .find(|&i| model.actions.len(i) > 1)
            .ok_or_else(|| Error::UnsupportedPolicy(format!("{}: no state has a choice of action", model.name)))?;
        let last = model.actions.len(state) - 1;
        match name {
            "one_switch" => Ok(Self::OneSwitch { state, before: 0, after: last }),
            "three_phase" => Ok(Self::ThreePhase { state, idle: 0, active: last }),
            other => Err(Error::UnsupportedPolicy(format!("unknown switching family `{other}`"))),
        }
    }

    pub fn num_parameters(&self) -> usize {
        match self {
            Self::OneSwitch { .. } => 1,
            Self::ThreePhase { .. } => 3,
        }
    }

    pub fn default_bounds(&self, horizon: f64) -> SwitchingBounds {
        match self {
            Self::OneSwitch { .. } => SwitchingBounds::new(vec![0.0], vec![horizon]),
            Self::ThreePhase { .. } => SwitchingBounds::new(vec![0.0, 0.0, 0.0], vec![horizon, 1.0, horizon]),
        }
    }

    /// Lower bounds that depend on earlier parameters (t2 ≥ t1).
    fn not_before(&self, level: usize) -> Option<usize> {
        match (self, level) {
            (Self::ThreePhase { .. }, 2) => Some(0),
            _ => None,
        }
    }

    /// Piecewise-constant control for the given parameters on [0, end].
    pub fn control(&self, model: &ModelSpec, params: &[f64], end: f64) -> Result<RelaxedControlPath> {
        if params.len() != self.num_parameters() {
            return Err(Error::Dimension(format!(
                "{} parameters given, family takes {}",
                params.len(),
                self.num_parameters()
            )));
        }
        let base = model.default_profile();
        let with = |state: usize, dist: ActionDistribution| -> ActionProfile {
            let mut p = base.clone();
            p[state] = dist;
            p
        };
        let pieces: Vec<(f64, ActionProfile)> = match *self {
            Self::OneSwitch { state, before, after } => {
                let len = model.actions.len(state);
                vec![
                    (0.0, with(state, ActionDistribution::dirac(len, before))),
                    (params[0], with(state, ActionDistribution::dirac(len, after))),
                ]
            }
            Self::ThreePhase { state, idle, active } => {
                let len = model.actions.len(state);
                let u = params[1].clamp(0.0, 1.0);
                let mut w = vec![0.0; len];
                w[idle] += 1.0 - u;
                w[active] += u;
                vec![
                    (0.0, with(state, ActionDistribution::dirac(len, idle))),
                    (params[0], with(state, ActionDistribution::new(w)?)),
                    (params[2].max(params[0]), with(state, ActionDistribution::dirac(len, idle))),
                ]
            }
        };
        piecewise(pieces, end)
    }
}

/// Drops empty pieces and merges equal neighbours.
fn piecewise(pieces: Vec<(f64, ActionProfile)>, end: f64) -> Result<RelaxedControlPath> {
    let mut starts: Vec<f64> = Vec::new();
    let mut segs: Vec<ActionProfile> = Vec::new();
    for (k, (start, prof)) in pieces.iter().enumerate() {
        let start = start.clamp(0.0, end);
        let stop = pieces.get(k + 1).map_or(end, |p| p.0.clamp(0.0, end));
        if stop <= start {
            continue;
        }
        if segs.last() == Some(prof) {
            continue;
        }
        starts.push(start);
        segs.push(prof.clone());
    }
    if starts.is_empty() {
        starts.push(0.0);
        segs.push(pieces[0].1.clone());
    }
    starts[0] = 0.0;
    RelaxedControlPath::new(starts, segs, end)
}

/// Search box and settings for [`optimize_switching`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitchingBounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Golden-section stopping width.
    pub tol: f64,
    /// RK4 steps over the horizon for each objective evaluation.
    pub steps: usize,
}

impl SwitchingBounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Self { lo, hi, tol: 1e-6, steps: DEFAULT_STEPS }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct OptimizeDiagnostics {
    pub iterations: usize,
    pub evaluations: usize,
    pub gradient_norm: Option<f64>,
    pub bracket_width: Option<f64>,
    pub bracket_failure: bool,
    pub max_iterations_reached: bool,
    /// Objective after each accepted iterate.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizeResult {
    pub control: RelaxedControlPath,
    pub value: f64,
    pub parameters: Vec<f64>,
    pub trajectory: LimitTrajectory,
    pub diagnostics: OptimizeDiagnostics,
}

struct Search<'a> {
    family: &'a SwitchingFamily,
    bounds: &'a SwitchingBounds,
    eval: &'a (dyn Fn(&[f64]) -> Result<f64> + Sync),
    evaluations: AtomicUsize,
    bracket_failure: AtomicBool,
}

struct Found {
    value: f64,
    params: Vec<f64>,
    width: f64,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| if k + 1 == n { hi } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 }).collect()
}

/// True if the sampled values rise then fall (plateaus ignored).
fn unimodal(ys: &[f64]) -> bool {
    let scale = ys.iter().fold(1.0f64, |m, y| m.max(y.abs()));
    let mut falling = false;
    for w in ys.windows(2) {
        let d = w[1] - w[0];
        if d.abs() <= 1e-12 * scale {
            continue;
        }
        if d < 0.0 {
            falling = true;
        } else if falling {
            return false;
        }
    }
    true
}

fn argmax(ys: &[f64]) -> usize {
    let mut best = 0;
    for (k, y) in ys.iter().enumerate() {
        if *y > ys[best] {
            best = k;
        }
    }
    best
}

impl Search<'_> {
    fn range(&self, prefix: &[f64]) -> (f64, f64) {
        let level = prefix.len();
        let mut lo = self.bounds.lo[level];
        if let Some(dep) = self.family.not_before(level) {
            lo = lo.max(prefix[dep]);
        }
        (lo, self.bounds.hi[level].max(lo))
    }

    fn best(&self, prefix: &[f64]) -> Result<Found> {
        let level = prefix.len();
        if level == self.family.num_parameters() {
            self.evaluations.fetch_add(1, Ordering::Relaxed);
            let value = (self.eval)(prefix)?;
            return Ok(Found { value, params: prefix.to_vec(), width: 0.0 });
        }
        let f = |x: f64| {
            let mut p = prefix.to_vec();
            p.push(x);
            self.best(&p)
        };
        let (lo, hi) = self.range(prefix);
        if hi - lo <= self.bounds.tol {
            return f(lo);
        }
        let sample = |xs: &[f64]| -> Result<Vec<Found>> { xs.par_iter().map(|&x| f(x)).collect() };
        let mut xs = linspace(lo, hi, COARSE_POINTS);
        let mut found = sample(&xs)?;
        let ys: Vec<f64> = found.iter().map(|r| r.value).collect();
        if !unimodal(&ys) {
            debug!("level {level}: coarse grid not unimodal, falling back to dense grid");
            self.bracket_failure.store(true, Ordering::Relaxed);
            xs = linspace(lo, hi, DENSE_POINTS);
            found = sample(&xs)?;
        }
        let ys: Vec<f64> = found.iter().map(|r| r.value).collect();
        let b = argmax(&ys);
        let mut a = xs[b.saturating_sub(1)];
        let mut c = xs[(b + 1).min(xs.len() - 1)];
        let mut best = found.swap_remove(b);
        // golden section on [a, c]
        let mut x1 = c - INV_PHI * (c - a);
        let mut x2 = a + INV_PHI * (c - a);
        let mut f1 = f(x1)?;
        let mut f2 = f(x2)?;
        while c - a > self.bounds.tol {
            if f1.value >= f2.value {
                c = x2;
                x2 = x1;
                f2 = f1;
                x1 = c - INV_PHI * (c - a);
                f1 = f(x1)?;
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + INV_PHI * (c - a);
                f2 = f(x2)?;
            }
        }
        for cand in [f1, f2] {
            if cand.value > best.value {
                best = cand;
            }
        }
        if level == 0 {
            best.width = c - a;
        }
        Ok(best)
    }
}

/// Maximises the limit objective over a switching family from the model's
/// initial state. Each parameter is located by a coarse grid followed by
/// golden-section search in the bracket around the best grid point, with
/// later parameters optimised for every trial value of earlier ones.
pub fn optimize_switching(
    model: &ModelSpec,
    family: &SwitchingFamily,
    bounds: &SwitchingBounds,
) -> Result<OptimizeResult> {
    let k = family.num_parameters();
    if bounds.lo.len() != k || bounds.hi.len() != k {
        return Err(Error::Dimension(format!("bounds for {} parameters, family takes {k}", bounds.lo.len())));
    }
    if bounds.lo.iter().zip(&bounds.hi).any(|(l, h)| !(l <= h)) || !(bounds.tol > 0.0) || bounds.steps == 0 {
        return Err(Error::InvalidParameter(format!("bad switching bounds {bounds:?}")));
    }
    let end = model.time_end()?;
    let mu0 = model.initial.clone();
    let grid_for = |control: &RelaxedControlPath| TimeGrid::for_control(control, end, end / bounds.steps as f64);
    let eval = |p: &[f64]| -> Result<f64> {
        let control = family.control(model, p, end)?;
        Ok(solve(model, &mu0, &control, &grid_for(&control)?)?.value)
    };
    let search = Search {
        family,
        bounds,
        eval: &eval,
        evaluations: AtomicUsize::new(0),
        bracket_failure: AtomicBool::new(false),
    };
    let found = search.best(&[])?;
    let control = family.control(model, &found.params, end)?;
    let sol = solve(model, &mu0, &control, &grid_for(&control)?)?;
    let evaluations = search.evaluations.load(Ordering::Relaxed) + 1;
    Ok(OptimizeResult {
        control,
        value: sol.value,
        parameters: found.params,
        trajectory: sol.trajectory,
        diagnostics: OptimizeDiagnostics {
            iterations: 1,
            evaluations,
            gradient_norm: None,
            bracket_width: Some(found.width),
            bracket_failure: search.bracket_failure.load(Ordering::Relaxed),
            max_iterations_reached: false,
            history: vec![sol.value],
        },
    })
}

/// Settings for [`optimize_direct`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirectOptions {
    pub max_iterations: usize,
    /// Stop when the projected gradient step of unit length is shorter.
    pub gradient_tol: f64,
    /// Stop when an accepted step improves the objective by less than this
    /// (relative to max(1, |J|)).
    pub value_tol: f64,
    pub fd_step: f64,
    pub initial_step: f64,
    pub max_backtracks: usize,
}

impl Default for DirectOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tol: 1e-8,
            value_tol: 1e-12,
            fd_step: 1e-6,
            initial_step: 1.0,
            max_backtracks: 40,
        }
    }
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// One free block of weights: segment `seg`, state `state`.
struct Block {
    seg: usize,
    state: usize,
}

struct Direct<'a> {
    model: &'a ModelSpec,
    mu0: &'a [f64],
    breakpoints: Vec<f64>,
    base: Vec<ActionProfile>,
    blocks: Vec<Block>,
    nodes: Vec<f64>,
    /// First node index of every segment.
    seg_node: Vec<usize>,
    end: f64,
    evaluations: AtomicUsize,
}

impl Direct<'_> {
    fn path(&self, w: &[Vec<f64>]) -> RelaxedControlPath {
        let mut segs = self.base.clone();
        for (b, wb) in self.blocks.iter().zip(w) {
            segs[b.seg][b.state] = ActionDistribution::raw(wb.clone());
        }
        RelaxedControlPath::new(self.breakpoints.clone(), segs, self.end).expect("validated at construction")
    }

    fn solve(&self, w: &[Vec<f64>]) -> Result<super::LimitSolution> {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        let path = self.path(w);
        forward_from(self.model, self.mu0, 0.0, &self.nodes, &mut PathControl(&path))
    }

    /// Objective with block `b` replaced by `wb`, integrating only from the
    /// start of its segment.
    fn perturbed(&self, w: &[Vec<f64>], base: &super::LimitSolution, b: usize, wb: Vec<f64>) -> Result<f64> {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        let mut segs = self.base.clone();
        for (blk, x) in self.blocks.iter().zip(w) {
            segs[blk.seg][blk.state] = ActionDistribution::raw(x.clone());
        }
        let blk = &self.blocks[b];
        segs[blk.seg][blk.state] = ActionDistribution::raw(wb);
        let path = RelaxedControlPath::new(self.breakpoints.clone(), segs, self.end).expect("validated");
        let k = self.seg_node[blk.seg];
        let mu = &base.trajectory.states[k];
        Ok(forward_from(self.model, mu, base.running[k], &self.nodes[k..], &mut PathControl(&path))?.value)
    }

    fn gradient(&self, w: &[Vec<f64>], base: &super::LimitSolution, eps: f64) -> Result<Vec<Vec<f64>>> {
        let affine = self.model.dynamics.action_affine();
        (0..self.blocks.len())
            .into_par_iter()
            .map(|b| {
                let acts = self.model.actions.actions(self.blocks[b].state);
                if affine {
                    // J depends on the block only through its mean action.
                    let k = (0..acts.len()).max_by(|&x, &y| acts[x].abs().total_cmp(&acts[y].abs())).unwrap();
                    if acts[k] == 0.0 {
                        return Ok(vec![0.0; acts.len()]);
                    }
                    let shift = eps / acts[k];
                    let mut up = w[b].clone();
                    up[k] += shift;
                    let mut down = w[b].clone();
                    down[k] -= shift;
                    let g = (self.perturbed(w, base, b, up)? - self.perturbed(w, base, b, down)?) / (2.0 * eps);
                    Ok(acts.iter().map(|a| g * a).collect())
                } else {
                    (0..acts.len())
                        .map(|a| {
                            let mut up = w[b].clone();
                            up[a] += eps;
                            let mut down = w[b].clone();
                            down[a] -= eps;
                            Ok((self.perturbed(w, base, b, up)? - self.perturbed(w, base, b, down)?) / (2.0 * eps))
                        })
                        .collect()
                }
            })
            .collect()
    }
}

fn ascent_step(w: &[Vec<f64>], g: &[Vec<f64>], s: f64) -> Vec<Vec<f64>> {
    w.iter()
        .zip(g)
        .map(|(wb, gb)| project_simplex(&wb.iter().zip(gb).map(|(x, d)| x + s * d).collect::<Vec<_>>()))
        .collect()
}

fn distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Projected gradient ascent on the weights of `init`'s segments, with
/// central finite-difference gradients and a doubling / halving step rule.
/// Only improving steps are accepted.
pub fn optimize_direct(
    model: &ModelSpec,
    mu0: &[f64],
    grid: &TimeGrid,
    init: &RelaxedControlPath,
    options: &DirectOptions,
) -> Result<OptimizeResult> {
    let end = model.horizon.finite().ok_or(Error::FiniteHorizonRequired)?;
    if (grid.end() - end).abs() > 1e-9 * end.max(1.0) {
        return Err(Error::InvalidParameter(format!("time grid ends at {}, horizon is {end}", grid.end())));
    }
    if !model.constraints.is_empty() {
        return Err(Error::CoupledConstraints);
    }
    if !init.covers(end) {
        return Err(Error::HorizonNotCovered { control_end: init.end(), horizon: end });
    }
    for prof in init.segments() {
        model.check_profile(prof)?;
    }
    // Integration nodes include every segment start.
    let mut nodes: Vec<f64> = grid.nodes().iter().chain(init.breakpoints()).copied().filter(|&t| t <= end).collect();
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    nodes.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * end.max(1.0));
    *nodes.last_mut().unwrap() = end;
    let seg_node: Vec<usize> = init
        .breakpoints()
        .iter()
        .map(|&b| nodes.iter().position(|&t| (t - b).abs() <= 1e-12 * end.max(1.0)).unwrap())
        .collect();
    let base = init.segments().to_vec();
    let blocks: Vec<Block> = (0..base.len())
        .flat_map(|seg| (0..model.num_states()).filter(|&i| model.actions.len(i) > 1).map(move |state| Block { seg, state }))
        .collect();
    let problem = Direct {
        model,
        mu0,
        breakpoints: init.breakpoints().to_vec(),
        base,
        blocks,
        nodes,
        seg_node,
        end,
        evaluations: AtomicUsize::new(0),
    };
    crate::model::check_probability(mu0)?;
    let mut w: Vec<Vec<f64>> =
        problem.blocks.iter().map(|b| problem.base[b.seg][b.state].weights().to_vec()).collect();
    let mut current = problem.solve(&w)?;
    let mut history = vec![current.value];
    let mut step = options.initial_step;
    let mut iterations = 0;
    let mut grad_norm = 0.0;
    let mut max_reached = false;
    loop {
        if iterations >= options.max_iterations {
            max_reached = true;
            break;
        }
        iterations += 1;
        let g = problem.gradient(&w, &current, options.fd_step)?;
        grad_norm = distance(&ascent_step(&w, &g, 1.0), &w);
        if grad_norm <= options.gradient_tol {
            break;
        }
        let mut accepted = None;
        for _ in 0..=options.max_backtracks {
            let trial = ascent_step(&w, &g, step);
            let sol = problem.solve(&trial)?;
            if sol.value > current.value {
                accepted = Some((trial, sol));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, sol)) = accepted else { break };
        let gain = sol.value - current.value;
        w = trial;
        current = sol;
        history.push(current.value);
        step *= 2.0;
        debug!("direct iteration {iterations}: J = {}, |g| = {grad_norm}, step = {step}", current.value);
        if gain <= options.value_tol * current.value.abs().max(1.0) {
            break;
        }
    }
    // Snap tiny projection residue so the result is a valid control.
    let segs: Vec<ActionProfile> = {
        let mut segs = problem.base.clone();
        for (b, wb) in problem.blocks.iter().zip(&w) {
            segs[b.seg][b.state] = ActionDistribution::normalized(wb.clone())?;
        }
        segs
    };
    let control = RelaxedControlPath::new(problem.breakpoints.clone(), segs, end)?;
    let grid = TimeGrid::from_nodes(problem.nodes.clone())?;
    let sol = solve(model, mu0, &control, &grid)?;
    Ok(OptimizeResult {
        control,
        value: sol.value,
        parameters: Vec::new(),
        trajectory: sol.trajectory,
        diagnostics: OptimizeDiagnostics {
            iterations,
            evaluations: problem.evaluations.load(Ordering::Relaxed) + 1,
            gradient_norm: Some(grad_norm),
            bracket_width: None,
            bracket_failure: false,
            max_iterations_reached: max_reached,
            history,
        },
    })
}

/// Control with `segments` equal pieces on [0, end], all set to `profile`.
pub fn uniform_segments(profile: &ActionProfile, end: f64, segments: usize) -> Result<RelaxedControlPath> {
    let breaks: Vec<f64> = (0..segments).map(|k| end * k as f64 / segments as f64).collect();
    RelaxedControlPath::new(breaks, vec![profile.clone(); segments], end)
}
