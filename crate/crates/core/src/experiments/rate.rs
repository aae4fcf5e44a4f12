//! Gap between the N-agent value of the limit-optimal open-loop control
//! and the limit value, as N grows.

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use super::median;
use crate::control::{RelaxedControlPath, TimeGrid};
use crate::error::{Error, Result};
use crate::exact::policy_evaluation;
use crate::io::{StudyFile, Table};
use crate::limit::{default_grid, objective_f};
use crate::model::{EmpiricalMeasure, ModelSpec};
use crate::sim::{monte_carlo_value, Policy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum RateMode {
    Exact,
    MonteCarlo { replications: usize },
}

#[derive(Debug, Clone, Serialize)]
pub struct RateRow {
    pub n: u64,
    /// "exact" or "mc".
    pub mode: &'static str,
    pub value: f64,
    pub se: Option<f64>,
    /// V^N − V^F.
    pub signed_gap: f64,
    pub gap: f64,
    pub scaled_gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateStudyResult {
    pub model: String,
    pub limit_value: f64,
    pub rows: Vec<RateRow>,
    /// Least-squares slope of log gap against log N (rows with gap > 0).
    pub slope: Option<f64>,
    pub max_scaled_gap: f64,
    pub median_scaled_gap: f64,
    pub warnings: Vec<String>,
}

impl RateStudyResult {
    pub fn table(&self) -> Table {
        let mut t = Table::new(
            ["n", "value", "se", "signed_gap", "gap", "sqrt_n_gap"].iter().map(|s| s.to_string()).collect(),
        );
        for r in &self.rows {
            t.rows.push(vec![r.n as f64, r.value, r.se.unwrap_or(0.0), r.signed_gap, r.gap, r.scaled_gap]);
        }
        t
    }

    /// One file per N holding that N's row of [`Self::table`].
    pub fn files(&self) -> Vec<StudyFile> {
        let full = self.table();
        self.rows
            .iter()
            .zip(full.rows)
            .map(|(r, row)| StudyFile { tag: r.n.to_string(), table: Table { header: full.header.clone(), rows: vec![row] } })
            .collect()
    }
}

/// Ordinary least squares slope of ln y on ln x over pairs with y > 0.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs.iter().zip(ys).filter(|(_, y)| **y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

fn exact_value(model: &ModelSpec, control: &RelaxedControlPath, mu0: &EmpiricalMeasure, end: f64) -> Result<f64> {
    let n = mu0.n();
    let bound = n as f64 * (model.num_states() as f64 - 1.0) * model.q_max();
    let h = if bound > 0.0 { (end / 2000.0).min(0.4 / bound) } else { end / 2000.0 };
    let grid = TimeGrid::for_control(control, end, h)?;
    let table = policy_evaluation(model, n, &Policy::OpenLoop(control.clone()), &grid)?;
    table.value_at(mu0).ok_or_else(|| Error::InvalidMeasure("initial measure not on the lattice".into()))
}

/// Runs the study for each N in `ns`. Initial measures are the
/// largest-remainder roundings of the model's initial state. In exact mode
/// a lattice that is too large falls back to Monte Carlo with 200
/// replications and a warning.
pub fn rate_study(
    model: &ModelSpec,
    control: &RelaxedControlPath,
    ns: &[u64],
    mode: RateMode,
    seed: u64,
) -> Result<RateStudyResult> {
    let end = model.horizon.finite().ok_or(Error::FiniteHorizonRequired)?;
    if ns.is_empty() || ns.windows(2).any(|w| w[1] <= w[0]) || ns[0] == 0 {
        return Err(Error::InvalidParameter(format!("N values must be positive and increasing, got {ns:?}")));
    }
    if let RateMode::MonteCarlo { replications } = mode {
        if replications < 200 {
            return Err(Error::InvalidParameter(format!("Monte Carlo mode needs >= 200 replications, got {replications}")));
        }
    }
    let limit_value = objective_f(model, &model.initial, control, &default_grid(model, control)?)?;
    let mc = |mu0: &EmpiricalMeasure, reps: usize| -> Result<(f64, Option<f64>)> {
        let est = monte_carlo_value(model, mu0, &Policy::OpenLoop(control.clone()), reps, seed.wrapping_add(mu0.n()))?;
        Ok((est.mean, Some(est.se)))
    };
    let results: Vec<Result<(RateRow, Option<String>)>> = ns
        .par_iter()
        .map(|&n| {
            let mu0 = EmpiricalMeasure::rounded(&model.initial, n)?;
            let (mode_name, (value, se), note) = match mode {
                RateMode::Exact => match exact_value(model, control, &mu0, end) {
                    Ok(v) => ("exact", (v, None), None),
                    Err(Error::LatticeTooLarge { size, cap }) => {
                        let msg = format!("N={n}: lattice of {size} points exceeds {cap}, using Monte Carlo");
                        warn!("{msg}");
                        ("mc", mc(&mu0, 200)?, Some(msg))
                    }
                    Err(e) => return Err(e),
                },
                RateMode::MonteCarlo { replications } => ("mc", mc(&mu0, replications)?, None),
            };
            let signed_gap = value - limit_value;
            let gap = signed_gap.abs();
            let row = RateRow { n, mode: mode_name, value, se, signed_gap, gap, scaled_gap: (n as f64).sqrt() * gap };
            Ok((row, note))
        })
        .collect();
    let mut rows = Vec::with_capacity(ns.len());
    let mut warnings = Vec::new();
    for r in results {
        let (row, note) = r?;
        rows.push(row);
        warnings.extend(note);
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let gaps: Vec<f64> = rows.iter().map(|r| r.gap).collect();
    let scaled: Vec<f64> = rows.iter().map(|r| r.scaled_gap).collect();
    Ok(RateStudyResult {
        model: model.name.clone(),
        limit_value,
        slope: loglog_slope(&xs, &gaps),
        max_scaled_gap: scaled.iter().copied().fold(0.0, f64::max),
        median_scaled_gap: median(&scaled),
        rows,
        warnings,
    })
}
