//! CSV and JSON output for trajectories, value tables and studies.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::control::RelaxedControlPath;
use crate::error::Result;
use crate::exact::SimplexLattice;
use crate::limit::LimitTrajectory;
use crate::sim::Trajectory;

/// A rectangular table of numbers with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Self { header, rows: Vec::new() }
    }
}

pub fn write_table(path: &Path, table: &Table) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|x| x.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn weight_header(control: &[crate::model::ActionDistribution], labels: &[String]) -> Vec<String> {
    control
        .iter()
        .enumerate()
        .flat_map(|(i, d)| (0..d.len()).map(move |k| format!("w_{}_{k}", labels[i])))
        .collect()
}

/// One row per constant piece: start time, counts, fractions and the
/// action weights in force.
pub fn trajectory_table(traj: &Trajectory, labels: &[String]) -> Table {
    let mut header = vec!["t".to_string()];
    header.extend(labels.iter().map(|l| format!("count_{l}")));
    header.extend(labels.iter().map(|l| format!("mu_{l}")));
    if let Some(seg) = traj.segments.first() {
        header.extend(weight_header(&seg.control, labels));
    }
    let n = traj.n as f64;
    let mut table = Table::new(header);
    for seg in &traj.segments {
        let mut row = vec![seg.start];
        row.extend(seg.counts.iter().map(|&c| c as f64));
        row.extend(seg.counts.iter().map(|&c| c as f64 / n));
        row.extend(seg.control.iter().flat_map(|d| d.weights().iter().copied()));
        table.rows.push(row);
    }
    table
}

#[derive(Serialize)]
struct TrajectorySidecar<'a> {
    model: &'a str,
    n: u64,
    end: f64,
    segments: usize,
    jumps: usize,
    final_counts: &'a [u64],
}

/// `path` gets the CSV, `path` with extension `json` a summary.
pub fn write_trajectory(path: &Path, model: &str, traj: &Trajectory, labels: &[String]) -> Result<()> {
    write_table(path, &trajectory_table(traj, labels))?;
    let side = TrajectorySidecar {
        model,
        n: traj.n,
        end: traj.end,
        segments: traj.segments.len(),
        jumps: traj.num_jumps(),
        final_counts: traj.final_counts(),
    };
    write_json(&path.with_extension("json"), &side)
}

/// Simulated fractions sampled at the given times.
pub fn sampled_table(traj: &Trajectory, labels: &[String], times: &[f64]) -> Table {
    let mut header = vec!["t".to_string()];
    header.extend(labels.iter().map(|l| format!("mu_{l}")));
    let mut table = Table::new(header);
    for &t in times {
        let mut row = vec![t];
        row.extend(traj.fractions_at(t));
        table.rows.push(row);
    }
    table
}

/// Limit trajectory on its grid with the control weights applied on each
/// step (the last row repeats the final piece).
pub fn limit_table(traj: &LimitTrajectory, control: Option<&RelaxedControlPath>, labels: &[String]) -> Table {
    let mut header = vec!["t".to_string()];
    header.extend(labels.iter().map(|l| format!("mu_{l}")));
    if let Some(c) = control {
        header.extend(weight_header(&c.segments()[0], labels));
    }
    let mut table = Table::new(header);
    for (t, mu) in traj.times.iter().zip(&traj.states) {
        let mut row = vec![*t];
        row.extend(mu.iter().copied());
        if let Some(c) = control {
            row.extend(c.at(*t).iter().flat_map(|d| d.weights().iter().copied()));
        }
        table.rows.push(row);
    }
    table
}

/// Counts, value and (if given) per-state action indices for each lattice
/// point.
pub fn value_table(lattice: &SimplexLattice, values: &[f64], policy: Option<&[u16]>, labels: &[String]) -> Table {
    let d = lattice.num_states();
    let mut header: Vec<String> = labels.iter().map(|l| format!("count_{l}")).collect();
    header.push("value".into());
    if policy.is_some() {
        header.extend(labels.iter().map(|l| format!("action_{l}")));
    }
    let mut table = Table::new(header);
    for p in 0..lattice.size() {
        let mut row: Vec<f64> = lattice.point(p).iter().map(|&c| c as f64).collect();
        row.push(values[p]);
        if let Some(pol) = policy {
            row.extend(pol[p * d..(p + 1) * d].iter().map(|&a| a as f64));
        }
        table.rows.push(row);
    }
    table
}

/// A study's CSV file, named `{study}_{model}_{tag}.csv`.
#[derive(Debug, Clone)]
pub struct StudyFile {
    pub tag: String,
    pub table: Table,
}

/// Writes `study.json` and one CSV per file into `dir` (created if needed).
pub fn write_study_dir<T: Serialize>(
    dir: &Path,
    study: &str,
    model: &str,
    summary: &T,
    files: &[StudyFile],
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::with_capacity(files.len() + 1);
    let json = dir.join("study.json");
    write_json(&json, summary)?;
    written.push(json);
    for f in files {
        let path = dir.join(format!("{study}_{model}_{}.csv", f.tag));
        write_table(&path, &f.table)?;
        written.push(path);
    }
    Ok(written)
}
