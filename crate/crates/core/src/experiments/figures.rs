//! CSV bundles with the deterministic trajectory and simulated paths for
//! each built-in example.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{feedback_nonconvergence_demo, nonuniqueness::cube_root_branch, sample_times, sup_tv_distance};
use crate::control::RelaxedControlPath;
use crate::error::{Error, Result};
use crate::io::{limit_table, sampled_table, write_study_dir, StudyFile};
use crate::limit::{default_grid, optimize_switching, solve, SwitchingFamily};
use crate::model::{reference_control, registry_get, EmpiricalMeasure, ModelSpec};
use crate::sim::{simulate, Policy};

pub const FIGURE_EXAMPLES: [&str; 4] = ["machine_replacement", "sir_malware", "cube_root", "resource_competition"];

const SAMPLE_POINTS: usize = 1001;

#[derive(Serialize)]
struct FigureSummary {
    example: String,
    seed: u64,
    limit_value: Option<f64>,
    control_breakpoints: Vec<f64>,
    paths: Vec<PathSummary>,
}

#[derive(Serialize)]
struct PathSummary {
    tag: String,
    n: u64,
    sup_tv_distance: Option<f64>,
}

fn simulated(
    model: &ModelSpec,
    control: &RelaxedControlPath,
    ns: &[u64],
    seed: u64,
) -> Result<(Vec<StudyFile>, Vec<PathSummary>)> {
    let end = model.time_end()?;
    let sol = solve(model, &model.initial, control, &default_grid(model, control)?)?;
    let times = sample_times(end, SAMPLE_POINTS);
    let labels = model.states.labels();
    let mut files = vec![StudyFile { tag: "limit".into(), table: limit_table(&sol.trajectory, Some(control), labels) }];
    let mut paths = Vec::new();
    let policy = Policy::OpenLoop(control.clone());
    for &n in ns {
        let mu0 = EmpiricalMeasure::rounded(&model.initial, n)?;
        let tr = simulate(model, &mu0, &policy, seed.wrapping_add(n))?;
        paths.push(PathSummary {
            tag: n.to_string(),
            n,
            sup_tv_distance: Some(sup_tv_distance(&tr, &sol.trajectory, end)),
        });
        files.push(StudyFile { tag: n.to_string(), table: sampled_table(&tr, labels, &times) });
    }
    Ok((files, paths))
}

/// Writes the bundle for `example` into `dir` and returns the files written.
pub fn replicate_figures(example: &str, seed: u64, dir: &Path) -> Result<Vec<PathBuf>> {
    if !FIGURE_EXAMPLES.contains(&example) {
        return Err(Error::UnknownExample(example.to_string()));
    }
    let model = registry_get(example, &BTreeMap::new())?;
    let end = model.time_end()?;
    let (files, summary) = match example {
        "machine_replacement" => {
            let control = reference_control(&model)?;
            let (files, paths) = simulated(&model, &control, &[100, 1000], seed)?;
            let value = solve(&model, &model.initial, &control, &default_grid(&model, &control)?)?.value;
            (files, summary(example, seed, Some(value), &control, paths))
        }
        "sir_malware" => {
            let family = SwitchingFamily::for_model(&model, "one_switch")?;
            let best = optimize_switching(&model, &family, &family.default_bounds(end))?;
            let (files, paths) = simulated(&model, &best.control, &[1000], seed)?;
            (files, summary(example, seed, Some(best.value), &best.control, paths))
        }
        "cube_root" => {
            let policy = Policy::OpenLoop(RelaxedControlPath::constant(model.default_profile(), end)?);
            let times = sample_times(end, SAMPLE_POINTS);
            let labels = model.states.labels();
            let mut files = Vec::new();
            let mut paths = Vec::new();
            for n in [100u64, 10_000] {
                // one agent starts in state "1"
                let mu0 = EmpiricalMeasure::new(vec![1, n - 1])?;
                let tr = simulate(&model, &mu0, &policy, seed.wrapping_add(n))?;
                let mut table = sampled_table(&tr, labels, &times);
                table.header.push("branch".into());
                for row in table.rows.iter_mut() {
                    let b = cube_root_branch(row[0]).min(1.0);
                    row.push(b);
                }
                files.push(StudyFile { tag: n.to_string(), table });
                paths.push(PathSummary { tag: n.to_string(), n, sup_tv_distance: None });
            }
            let control = RelaxedControlPath::constant(model.default_profile(), end)?;
            (files, summary(example, seed, None, &control, paths))
        }
        _ => {
            let demo = feedback_nonconvergence_demo(&model, &[1400], 1, seed)?;
            let files = demo.files(&model);
            let row = &demo.rows[0];
            let paths = vec![
                PathSummary { tag: "1400_open_loop".into(), n: 1400, sup_tv_distance: Some(row.open_loop_distance) },
                PathSummary { tag: "1400_feedback".into(), n: 1400, sup_tv_distance: Some(row.feedback_distance) },
            ];
            let control = demo.open_loop_control.clone().expect("demo records its control");
            (files, summary(example, seed, Some(demo.fluid_value), &control, paths))
        }
    };
    write_study_dir(dir, "figure", example, &summary, &files)
}

fn summary(
    example: &str,
    seed: u64,
    limit_value: Option<f64>,
    control: &RelaxedControlPath,
    paths: Vec<PathSummary>,
) -> FigureSummary {
    FigureSummary {
        example: example.to_string(),
        seed,
        limit_value,
        control_breakpoints: control.discontinuities(),
        paths,
    }
}
