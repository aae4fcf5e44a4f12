//! Built-in models: machine replacement, SIR malware, resource competition
//! and the cube-root non-uniqueness example.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::validate::{core_checks, default_probe_grid, DEFAULT_PROBE_RESOLUTION};
use super::{ActionDistribution, ActionGrid, Dynamics, Horizon, ModelSpec, ResourceConstraint, StateSpace};
use crate::control::RelaxedControlPath;
use crate::error::{Error, Result};

pub const MODEL_NAMES: [&str; 4] = ["machine_replacement", "sir_malware", "resource_competition", "cube_root"];

/// Looks up a built-in model, applies overrides and rejects parameter
/// values that break (Q1)-(Q3).
pub fn registry_get(name: &str, overrides: &BTreeMap<String, f64>) -> Result<ModelSpec> {
    let model = build_unchecked(name, overrides)?;
    let grid = default_probe_grid(model.num_states(), DEFAULT_PROBE_RESOLUTION);
    let rep = core_checks(&model, &grid, 1e-12);
    if !rep.passed() {
        return Err(Error::InvalidParameter(format!(
            "model `{name}` violates its assumptions: {}",
            rep.warnings.join("; ")
        )));
    }
    Ok(model)
}

/// Builds the model without the assumption check, so that a validator can
/// report on broken parameter sets.
pub fn build_unchecked(name: &str, overrides: &BTreeMap<String, f64>) -> Result<ModelSpec> {
    let defaults = defaults(name)?;
    let mut params = defaults.clone();
    for (k, v) in overrides {
        if !defaults.contains_key(k) {
            return Err(Error::InvalidParameter(format!("model `{name}` has no parameter `{k}`")));
        }
        if v.is_nan() {
            return Err(Error::InvalidParameter(format!("parameter `{k}` is NaN")));
        }
        params.insert(k.clone(), *v);
    }
    match name {
        "machine_replacement" => machine_replacement(params),
        "sir_malware" => sir_malware(params),
        "resource_competition" => resource_competition(params),
        "cube_root" => cube_root(params),
        _ => unreachable!(),
    }
}

fn defaults(name: &str) -> Result<BTreeMap<String, f64>> {
    let pairs: &[(&str, f64)] = match name {
        "machine_replacement" => &[
            ("C", 1.0),
            ("g", 2.0),
            ("lambda_wb", 1.0),
            ("lambda_bw", 2.0),
            ("T", 4.0),
            ("beta", 0.0),
            ("repair_cost_mode", 0.0),
        ],
        "sir_malware" => &[
            ("lambda_SI", 0.6),
            ("lambda_SR", 0.2),
            ("lambda_IR", 0.2),
            ("a_bar", 1.0),
            ("T", 10.0),
            ("beta", 0.0),
            ("I0", 0.1),
            ("grid_points", 101.0),
        ],
        "resource_competition" => &[
            ("lambda1", 1.0),
            ("lambda2", 6.0),
            ("lambda3", 1.5),
            ("lambda5", 1.0),
            ("lambda6", 6.0),
            ("lambda7", 1.5),
            ("priority_threshold", 1e-4),
            ("priority_penalty", 10.0),
            ("T", 15.0),
            ("beta", 0.0),
        ],
        "cube_root" => &[("cap", 0.99), ("T", 2.0), ("beta", 0.0)],
        _ => return Err(Error::UnknownModel(name.to_string())),
    };
    Ok(pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect())
}

fn horizon_from(params: &BTreeMap<String, f64>) -> Horizon {
    let t = params["T"];
    if t.is_infinite() {
        Horizon::Infinite
    } else {
        Horizon::Finite(t)
    }
}

fn binary_actions(states: usize, controlled: &[usize]) -> Vec<Vec<f64>> {
    (0..states)
        .map(|i| if controlled.contains(&i) { vec![0.0, 1.0] } else { vec![0.0] })
        .collect()
}

/// States 0 = working, 1 = broken; in state 1 action 0 = do nothing,
/// 1 = repair.
struct MachineReplacement {
    c: f64,
    g: f64,
    lambda_wb: f64,
    lambda_bw: f64,
    /// 0: cost C per unit of repair probability (continuous extension of
    /// C/(1-μ(0)) per broken machine); 1: cost C per repaired broken machine.
    per_machine_cost: bool,
}

impl Dynamics for MachineReplacement {
    fn intensity(&self, i: usize, a: f64, _mu: &[f64], row: &mut [f64]) {
        if i == 0 {
            row[0] = -self.lambda_wb;
            row[1] = self.lambda_wb;
        } else {
            row[0] = self.lambda_bw * a;
            row[1] = -self.lambda_bw * a;
        }
    }

    fn reward(&self, i: usize, a: f64, mu: &[f64]) -> f64 {
        if i == 0 {
            self.g
        } else if self.per_machine_cost || mu[1] == 0.0 {
            -self.c * a
        } else {
            -self.c * a / mu[1]
        }
    }

    fn weighted_reward(&self, i: usize, a: f64, mu: &[f64]) -> f64 {
        if i == 0 {
            self.g * mu[0]
        } else if self.per_machine_cost {
            -self.c * a * mu[1]
        } else {
            -self.c * a
        }
    }

    fn action_affine(&self) -> bool {
        true
    }
}

fn machine_replacement(p: BTreeMap<String, f64>) -> Result<ModelSpec> {
    let mode = p["repair_cost_mode"];
    if mode != 0.0 && mode != 1.0 {
        return Err(Error::InvalidParameter("repair_cost_mode must be 0 or 1".into()));
    }
    let dyn_ = MachineReplacement {
        c: p["C"],
        g: p["g"],
        lambda_wb: p["lambda_wb"],
        lambda_bw: p["lambda_bw"],
        per_machine_cost: mode == 1.0,
    };
    ModelSpec::new(
        "machine_replacement",
        StateSpace::new(["working", "broken"])?,
        ActionGrid::new(vec![vec![0.0], vec![0.0, 1.0]])?,
        Arc::new(dyn_),
        p["beta"],
        horizon_from(&p),
        vec![1.0, 0.0],
        p,
    )
}

/// States S, I, D, R. The kill rate a ∈ [0, ā] acts in state I.
struct SirMalware {
    lambda_si: f64,
    lambda_sr: f64,
    lambda_ir: f64,
    t: f64,
}

impl Dynamics for SirMalware {
    fn intensity(&self, i: usize, a: f64, mu: &[f64], row: &mut [f64]) {
        match i {
            0 => {
                row[1] = self.lambda_si * mu[1];
                row[3] = self.lambda_sr;
                row[0] = -(row[1] + row[3]);
            }
            1 => {
                row[2] = a;
                row[3] = self.lambda_ir;
                row[1] = -(a + self.lambda_ir);
            }
            _ => {}
        }
    }

    fn reward(&self, _i: usize, _a: f64, mu: &[f64]) -> f64 {
        mu[1] * mu[1] / self.t
    }

    fn terminal(&self, mu: &[f64]) -> f64 {
        mu[2]
    }

    fn action_affine(&self) -> bool {
        true
    }
}

fn sir_malware(p: BTreeMap<String, f64>) -> Result<ModelSpec> {
    let i0 = p["I0"];
    if !(i0 > 0.0 && i0 < 1.0) {
        return Err(Error::InvalidParameter(format!("I0 = {i0} must lie in (0, 1)")));
    }
    let points = p["grid_points"];
    if !(points >= 2.0) || points.fract() != 0.0 {
        return Err(Error::InvalidParameter("grid_points must be an integer >= 2".into()));
    }
    let t = p["T"];
    if !t.is_finite() {
        return Err(Error::InvalidParameter("the SIR objective needs a finite T".into()));
    }
    let a_bar = p["a_bar"];
    if !(a_bar > 0.0) {
        return Err(Error::InvalidParameter("a_bar must be positive".into()));
    }
    let dyn_ = SirMalware { lambda_si: p["lambda_SI"], lambda_sr: p["lambda_SR"], lambda_ir: p["lambda_IR"], t };
    let actions = vec![vec![0.0], ActionGrid::interval(0.0, a_bar, points as usize), vec![0.0], vec![0.0]];
    ModelSpec::new(
        "sir_malware",
        StateSpace::new(["S", "I", "D", "R"])?,
        ActionGrid::new(actions)?,
        Arc::new(dyn_),
        p["beta"],
        horizon_from(&p),
        vec![1.0 - i0, i0, 0.0, 0.0],
        p,
    )
}

/// Two three-stage lines 1→2→3→4 and 5→6→7→8 (indices 0..7). Stages 2/7
/// and 3/6 share a server; action 1 activates the stage.
struct ResourceCompetition {
    rates: [f64; 8],
    threshold: f64,
    penalty: f64,
}

impl Dynamics for ResourceCompetition {
    fn intensity(&self, i: usize, a: f64, _mu: &[f64], row: &mut [f64]) {
        let rate = match i {
            0 | 4 => self.rates[i],
            1 | 2 | 5 | 6 => a * self.rates[i],
            _ => return,
        };
        row[i] = -rate;
        row[i + 1] = rate;
    }

    fn reward(&self, i: usize, _a: f64, mu: &[f64]) -> f64 {
        match i {
            0 | 1 | 4 | 5 => -1.0,
            2 | 6 => {
                if mu[i] >= self.threshold {
                    -1.0 - self.penalty
                } else {
                    -1.0
                }
            }
            _ => 0.0,
        }
    }

    fn action_affine(&self) -> bool {
        true
    }
}

fn resource_competition(p: BTreeMap<String, f64>) -> Result<ModelSpec> {
    let threshold = p["priority_threshold"];
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidParameter("priority_threshold must lie in (0, 1)".into()));
    }
    let dyn_ = ResourceCompetition {
        rates: [p["lambda1"], p["lambda2"], p["lambda3"], 0.0, p["lambda5"], p["lambda6"], p["lambda7"], 0.0],
        threshold,
        penalty: p["priority_penalty"],
    };
    let mu0: Vec<f64> = [5.0, 1.0, 1.0, 0.0, 5.0, 1.0, 1.0, 0.0].iter().map(|x| x / 14.0).collect();
    let constraints = vec![
        ResourceConstraint { members: vec![(1, 1), (6, 1)], cap: 1.0 },
        ResourceConstraint { members: vec![(2, 1), (5, 1)], cap: 1.0 },
    ];
    Ok(ModelSpec::new(
        "resource_competition",
        StateSpace::new(["1", "2", "3", "4", "5", "6", "7", "8"])?,
        ActionGrid::new(binary_actions(8, &[1, 2, 5, 6]))?,
        Arc::new(dyn_),
        p["beta"],
        horizon_from(&p),
        mu0,
        p,
    )?
    .with_constraints(constraints))
}

/// Uncontrolled two-state model; state 0 ("1") is absorbing and agents in
/// state 1 ("2") move with intensity μ(1)^{1/3}/(1−μ(1)), frozen at the cap.
struct CubeRoot {
    cap: f64,
}

impl CubeRoot {
    fn rate(&self, x: f64) -> f64 {
        let x = x.max(0.0);
        if x <= self.cap {
            x.cbrt() / (1.0 - x)
        } else {
            self.cap.cbrt() / (1.0 - self.cap)
        }
    }
}

impl Dynamics for CubeRoot {
    fn intensity(&self, i: usize, _a: f64, mu: &[f64], row: &mut [f64]) {
        if i == 1 {
            let r = self.rate(mu[0]);
            row[0] = r;
            row[1] = -r;
        }
    }

    fn reward(&self, _i: usize, _a: f64, _mu: &[f64]) -> f64 {
        0.0
    }
}

fn cube_root(p: BTreeMap<String, f64>) -> Result<ModelSpec> {
    let cap = p["cap"];
    if !(cap > 0.0 && cap < 1.0) {
        return Err(Error::InvalidParameter("cap must lie in (0, 1)".into()));
    }
    ModelSpec::new(
        "cube_root",
        StateSpace::new(["1", "2"])?,
        ActionGrid::new(vec![vec![0.0], vec![0.0]])?,
        Arc::new(CubeRoot { cap }),
        p["beta"],
        horizon_from(&p),
        vec![0.0, 1.0],
        p,
    )
}

/// The control described for each model, when one is known in closed form:
/// three-phase repair for machine replacement (switches at ln 2 and T − ln 2,
/// repair fraction 1/2), a single switch to ā at t = 4.9 for SIR, the only
/// admissible control for the cube-root model.
pub fn reference_control(model: &ModelSpec) -> Result<RelaxedControlPath> {
    let end = model.time_end()?;
    match model.name.as_str() {
        "machine_replacement" => {
            let t1 = std::f64::consts::LN_2;
            let t2 = end - std::f64::consts::LN_2;
            let idle = vec![ActionDistribution::dirac(1, 0), ActionDistribution::dirac(2, 0)];
            let half = vec![ActionDistribution::dirac(1, 0), ActionDistribution::new(vec![0.5, 0.5])?];
            if t2 <= t1 {
                return RelaxedControlPath::constant(idle, end);
            }
            RelaxedControlPath::new(vec![0.0, t1, t2], vec![idle.clone(), half, idle], end)
        }
        "sir_malware" => {
            let n = model.actions.len(1);
            let before = vec![
                ActionDistribution::dirac(1, 0),
                ActionDistribution::dirac(n, 0),
                ActionDistribution::dirac(1, 0),
                ActionDistribution::dirac(1, 0),
            ];
            let mut after = before.clone();
            after[1] = ActionDistribution::dirac(n, n - 1);
            let t1 = 4.9f64.min(end);
            if t1 >= end {
                return RelaxedControlPath::constant(before, end);
            }
            RelaxedControlPath::new(vec![0.0, t1], vec![before, after], end)
        }
        "cube_root" => RelaxedControlPath::constant(model.default_profile(), end),
        other => Err(Error::UnsupportedPolicy(format!("no reference control for `{other}`"))),
    }
}
