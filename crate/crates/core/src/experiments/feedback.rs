//! Resource competition: the open-loop control recorded from the fluid
//! priority rule converges as N grows, the priority rule applied as an
//! N-agent feedback does not.

use serde::Serialize;

use super::{mean, sup_tv_distance};
use crate::control::{RelaxedControlPath, TimeGrid};
use crate::error::{Error, Result};
use crate::io::{limit_table, sampled_table, StudyFile};
use crate::limit::{integrate_limit_feedback, LimitSolution, DEFAULT_STEPS};
use crate::model::{ActionDistribution, ActionProfile, EmpiricalMeasure, ModelSpec};
use crate::sim::{replicate, simulate_with_rng, FeedbackRule, Policy, Trajectory};

// 0-based indices of the labelled states "2", "3", "6", "7".
const S2: usize = 1;
const S3: usize = 2;
const S6: usize = 5;
const S7: usize = 6;

struct Rates {
    l2: f64,
    l3: f64,
    l6: f64,
    l7: f64,
    theta: f64,
}

fn rates(model: &ModelSpec) -> Result<Rates> {
    if model.name != "resource_competition" {
        return Err(Error::WrongModelFamily { expected: "resource_competition", got: model.name.clone() });
    }
    let p = |k: &str| model.param(k).ok_or_else(|| Error::InvalidParameter(format!("missing `{k}`")));
    Ok(Rates {
        l2: p("lambda2")?,
        l3: p("lambda3")?,
        l6: p("lambda6")?,
        l7: p("lambda7")?,
        theta: p("priority_threshold")?,
    })
}

/// Profile with activation a in "2", 1 − a in "7", b in "6", 1 − b in "3".
fn profile(a: f64, b: f64) -> ActionProfile {
    let mut p: ActionProfile = (0..8).map(|_| ActionDistribution::dirac(1, 0)).collect();
    let bin = |x: f64| ActionDistribution::new(vec![1.0 - x, x]).expect("weight in [0, 1]");
    p[S2] = bin(a);
    p[S7] = bin(1.0 - a);
    p[S6] = bin(b);
    p[S3] = bin(1.0 - b);
    p
}

/// The priority rule as an N-agent feedback: "3" is served whenever more
/// than the threshold fraction is there (b = 0), likewise "7" (a = 0).
pub fn priority_rule(model: &ModelSpec) -> Result<FeedbackRule> {
    let r = rates(model)?;
    Ok(FeedbackRule::new("priority", move |mu| {
        let b = if mu[S3] <= r.theta { 1.0 } else { 0.0 };
        let a = if mu[S7] <= r.theta { 1.0 } else { 0.0 };
        profile(a, b)
    }))
}

/// The priority rule in the fluid model. Once "3" (resp. "7") has drained
/// to the threshold, the control that holds it there is used (sliding
/// mode): 1 − b = a·k2 and 1 − a = b·k6 with k2 = λ2μ(2)/(λ3θ),
/// k6 = λ6μ(6)/(λ7θ).
pub fn fluid_priority_rule(model: &ModelSpec) -> Result<FeedbackRule> {
    let r = rates(model)?;
    Ok(FeedbackRule::new("fluid_priority", move |mu| {
        let low3 = mu[S3] <= r.theta;
        let low7 = mu[S7] <= r.theta;
        let (a, b) = match (low3, low7) {
            (false, false) => (0.0, 0.0),
            (false, true) => (1.0, 0.0),
            (true, false) => (0.0, 1.0),
            (true, true) => {
                let k2 = r.l2 * mu[S2] / (r.l3 * r.theta);
                let k6 = r.l6 * mu[S6] / (r.l7 * r.theta);
                let det = 1.0 - k2 * k6;
                if det.abs() < 1e-12 {
                    (1.0, 1.0)
                } else {
                    (((1.0 - k6) / det).clamp(0.0, 1.0), ((1.0 - k2) / det).clamp(0.0, 1.0))
                }
            }
        };
        profile(a, b)
    }))
}

#[derive(Debug, Clone, Serialize)]
pub struct FeedbackDemoRow {
    pub n: u64,
    /// Mean over replications of the sup-TV distance to the fluid path.
    pub open_loop_distance: f64,
    pub feedback_distance: f64,
    pub open_loop_distances: Vec<f64>,
    pub feedback_distances: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FeedbackDemo {
    pub model: String,
    pub fluid_value: f64,
    pub rows: Vec<FeedbackDemoRow>,
    #[serde(skip)]
    pub fluid: Option<LimitSolution>,
    #[serde(skip)]
    pub open_loop_control: Option<RelaxedControlPath>,
    /// First replication's paths per N: (open loop, feedback).
    #[serde(skip)]
    pub examples: Vec<(u64, Trajectory, Trajectory)>,
}

impl FeedbackDemo {
    pub fn files(&self, model: &ModelSpec) -> Vec<StudyFile> {
        let labels = model.states.labels();
        let mut out = Vec::new();
        if let Some(f) = &self.fluid {
            out.push(StudyFile {
                tag: "limit".into(),
                table: limit_table(&f.trajectory, self.open_loop_control.as_ref(), labels),
            });
        }
        let end = model.time_end().unwrap_or(1.0);
        let times = super::sample_times(end, 1001);
        for (n, ol, fb) in &self.examples {
            out.push(StudyFile { tag: format!("{n}_open_loop"), table: sampled_table(ol, labels, &times) });
            out.push(StudyFile { tag: format!("{n}_feedback"), table: sampled_table(fb, labels, &times) });
        }
        out
    }
}

/// For each N: the fluid trajectory under the priority rule, and
/// `replications` simulated paths under the recorded open-loop control and
/// under the N-agent priority feedback, from the rounded initial state.
pub fn feedback_nonconvergence_demo(model: &ModelSpec, ns: &[u64], replications: usize, seed: u64) -> Result<FeedbackDemo> {
    if replications == 0 || ns.is_empty() {
        return Err(Error::InvalidParameter("need at least one N and one replication".into()));
    }
    let end = model.time_end()?;
    let grid = TimeGrid::uniform(end, DEFAULT_STEPS)?;
    let (fluid, control) = integrate_limit_feedback(model, &model.initial, &fluid_priority_rule(model)?, &grid)?;
    let open_loop = Policy::OpenLoop(control.clone());
    let feedback = Policy::Feedback(priority_rule(model)?);
    let mut rows = Vec::new();
    let mut examples = Vec::new();
    for &n in ns {
        let mu0 = EmpiricalMeasure::rounded(&model.initial, n)?;
        let run = |policy: &Policy, salt: u64| {
            replicate(replications, seed.wrapping_add(n).wrapping_add(salt), |rng| {
                simulate_with_rng(model, &mu0, policy, rng)
            })
        };
        let ol = run(&open_loop, 0)?;
        let fb = run(&feedback, 1 << 32)?;
        let dist = |paths: &[Trajectory]| -> Vec<f64> {
            paths.iter().map(|p| sup_tv_distance(p, &fluid.trajectory, end)).collect()
        };
        let (dol, dfb) = (dist(&ol), dist(&fb));
        rows.push(FeedbackDemoRow {
            n,
            open_loop_distance: mean(&dol),
            feedback_distance: mean(&dfb),
            open_loop_distances: dol,
            feedback_distances: dfb,
        });
        examples.push((n, ol.into_iter().next().unwrap(), fb.into_iter().next().unwrap()));
    }
    Ok(FeedbackDemo {
        model: model.name.clone(),
        fluid_value: fluid.value,
        rows,
        fluid: Some(fluid),
        open_loop_control: Some(control),
        examples,
    })
}
