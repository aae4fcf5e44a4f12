//! Piecewise-constant relaxed control paths and time grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ActionDistribution, ActionProfile};

/// t ↦ per-state action distribution, constant on [b_k, b_{k+1}).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxedControlPath {
    breakpoints: Vec<f64>,
    segments: Vec<ActionProfile>,
    end: f64,
}

impl RelaxedControlPath {
    pub fn new(breakpoints: Vec<f64>, segments: Vec<ActionProfile>, end: f64) -> Result<Self> {
        if breakpoints.is_empty() || breakpoints[0] != 0.0 {
            return Err(Error::InvalidParameter("breakpoints must start at 0".into()));
        }
        if breakpoints.len() != segments.len() {
            return Err(Error::Dimension("one segment per breakpoint required".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("breakpoints must be strictly increasing".into()));
        }
        if !(end > *breakpoints.last().unwrap()) {
            return Err(Error::InvalidParameter("path end must follow the last breakpoint".into()));
        }
        let d = segments[0].len();
        for s in &segments {
            if s.len() != d {
                return Err(Error::Dimension("segments disagree on the number of states".into()));
            }
            for (i, dist) in s.iter().enumerate() {
                if dist.len() != segments[0][i].len() {
                    return Err(Error::Dimension(format!("state {i}: action count changes between segments")));
                }
            }
        }
        Ok(Self { breakpoints, segments, end })
    }

    pub fn constant(profile: ActionProfile, end: f64) -> Result<Self> {
        Self::new(vec![0.0], vec![profile], end)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn segments(&self) -> &[ActionProfile] {
        &self.segments
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn segment_index(&self, t: f64) -> usize {
        match self.breakpoints.partition_point(|&b| b <= t) {
            0 => 0,
            k => k - 1,
        }
    }

    /// Profile applied at time t (right-continuous in t).
    pub fn at(&self, t: f64) -> &ActionProfile {
        &self.segments[self.segment_index(t)]
    }

    /// First breakpoint strictly after t.
    pub fn next_breakpoint(&self, t: f64) -> Option<f64> {
        let k = self.breakpoints.partition_point(|&b| b <= t);
        self.breakpoints.get(k).copied()
    }

    /// Breakpoints at which the profile actually changes.
    pub fn discontinuities(&self) -> Vec<f64> {
        (1..self.segments.len())
            .filter(|&k| self.segments[k] != self.segments[k - 1])
            .map(|k| self.breakpoints[k])
            .collect()
    }

    pub fn covers(&self, horizon: f64) -> bool {
        self.end >= horizon
    }

    pub fn num_states(&self) -> usize {
        self.segments[0].len()
    }

    /// Replaces the distribution of one state on every segment.
    pub fn map_state(&self, state: usize, f: impl Fn(usize, &ActionDistribution) -> ActionDistribution) -> Self {
        let mut out = self.clone();
        for (k, s) in out.segments.iter_mut().enumerate() {
            s[state] = f(k, &s[state]);
        }
        out
    }
}

/// Increasing time nodes t_0 = 0 < … < t_K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 || nodes[0] != 0.0 || nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("time grid must start at 0 and increase".into()));
        }
        Ok(Self { nodes })
    }

    pub fn uniform(end: f64, steps: usize) -> Result<Self> {
        if !(end > 0.0) || !end.is_finite() || steps == 0 {
            return Err(Error::InvalidParameter(format!("uniform grid on [0, {end}] with {steps} steps")));
        }
        let mut nodes: Vec<f64> = (0..=steps).map(|k| end * k as f64 / steps as f64).collect();
        nodes[steps] = end;
        Ok(Self { nodes })
    }

    /// Grid containing every breakpoint in (0, end) as a node, with each
    /// piece split into equal steps no longer than `max_step`.
    pub fn aligned(end: f64, max_step: f64, breakpoints: &[f64]) -> Result<Self> {
        if !(end > 0.0) || !end.is_finite() || !(max_step > 0.0) {
            return Err(Error::InvalidParameter(format!("aligned grid on [0, {end}] with step {max_step}")));
        }
        let mut cuts: Vec<f64> = breakpoints.iter().copied().filter(|&b| b > 0.0 && b < end).collect();
        cuts.push(0.0);
        cuts.push(end);
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * end.max(1.0));
        let mut nodes = vec![0.0];
        for w in cuts.windows(2) {
            let len = w[1] - w[0];
            let n = ((len / max_step) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
            for k in 1..n {
                nodes.push(w[0] + len * k as f64 / n as f64);
            }
            nodes.push(w[1]);
        }
        Self::from_nodes(nodes)
    }

    pub fn for_control(control: &RelaxedControlPath, end: f64, max_step: f64) -> Result<Self> {
        Self::aligned(end, max_step, control.breakpoints())
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn end(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn max_step(&self) -> f64 {
        self.nodes.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Each interval split in two.
    pub fn halved(&self) -> Self {
        let mut nodes = Vec::with_capacity(2 * self.nodes.len());
        for w in self.nodes.windows(2) {
            nodes.push(w[0]);
            nodes.push(0.5 * (w[0] + w[1]));
        }
        nodes.push(self.end());
        Self { nodes }
    }
}
