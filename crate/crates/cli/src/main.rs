//! `mfctmdp` command-line driver.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use mfctmdp::exact::{finite_horizon_solve, policy_evaluation, value_iteration};
use mfctmdp::experiments::{
    equivalence_study, feedback_nonconvergence_demo, fluid_priority_rule, nonuniqueness_demo, priority_rule,
    rate_study, replicate_figures, RateMode, FIGURE_EXAMPLES,
};
use mfctmdp::io::{limit_table, value_table, write_json, write_study_dir, write_table, write_trajectory};
use mfctmdp::limit::{
    integrate_limit_feedback, optimize_direct, optimize_switching, solve, uniform_segments, DirectOptions,
    SwitchingFamily, DEFAULT_STEPS,
};
use mfctmdp::model::{
    build_unchecked, default_probe_grid, reference_control, registry_get, validate_assumptions, MODEL_NAMES,
};
use mfctmdp::sim::{discounted_reward, monte_carlo_value, simulate, FeedbackRule, McEstimate, Policy};
use mfctmdp::{EmpiricalMeasure, Error, ModelSpec, RelaxedControlPath, TimeGrid};

const SEED_ENV: &str = "MFCTMDP_SEED";

#[derive(Parser, Debug)]
#[command(name = "mfctmdp", version, about = "Mean-field controlled CTMDP toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    args: Args,
}

#[derive(clap::Args, Debug, Default)]
struct Args {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    model: Option<String>,
    /// Parameter override `key=value`, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Number of agents.
    #[arg(long = "N", global = true)]
    n: Option<u64>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Horizon T; `inf` for an infinite horizon.
    #[arg(long, global = true)]
    horizon: Option<f64>,
    /// Random seed; falls back to the MFCTMDP_SEED environment variable.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    replications: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for replications and N values.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    dry_run: bool,
    /// `reference`, `open_loop:FILE`, `jump_adapted:FILE` or `feedback:NAME`.
    #[arg(long, global = true)]
    policy: Option<String>,
    /// `one_switch`, `three_phase` or `direct`.
    #[arg(long, global = true)]
    family: Option<String>,
    /// Comma-separated list of N values for studies.
    #[arg(long = "Ns", global = true, value_delimiter = ',')]
    ns: Option<Vec<u64>>,
    /// RK4 steps over the horizon.
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Value iteration tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the model assumptions on the probe grid.
    Validate,
    /// Simulate the N-agent system.
    Simulate,
    /// Solve the N-agent problem on the lattice P_N(S).
    Exact,
    /// Integrate the deterministic limit under a policy.
    Limit,
    /// Optimize the deterministic limit problem.
    Optimize,
    /// Run one of the scripted studies.
    Study { kind: StudyKind },
    /// Write the CSV bundle for a built-in example.
    ReplicateFigures {
        /// Example name; defaults to --model.
        #[arg(long)]
        example: Option<String>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "lowercase")]
enum StudyKind {
    Rate,
    Equivalence,
    Nonuniqueness,
    Feedback,
}

/// Resolved run configuration. Also the format of `--config` files.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    model: Option<String>,
    #[serde(default)]
    set: BTreeMap<String, f64>,
    #[serde(rename = "N")]
    n: Option<u64>,
    beta: Option<f64>,
    horizon: Option<f64>,
    seed: Option<u64>,
    replications: Option<usize>,
    out: Option<PathBuf>,
    policy: Option<String>,
    family: Option<String>,
    #[serde(rename = "Ns")]
    ns: Option<Vec<u64>>,
    steps: Option<usize>,
    tol: Option<f64>,
    jobs: Option<usize>,
}

impl RunConfig {
    fn resolve(args: &Args) -> Result<Self, Error> {
        let mut cfg: RunConfig = match &args.config {
            Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
            None => RunConfig::default(),
        };
        for kv in &args.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::InvalidParameter(format!("--set expects key=value, got `{kv}`")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("--set {k}: `{v}` is not a number")))?;
            cfg.set.insert(k.trim().to_string(), v);
        }
        macro_rules! over {
            ($($f:ident),*) => { $( if args.$f.is_some() { cfg.$f = args.$f.clone(); } )* };
        }
        over!(model, n, beta, horizon, seed, replications, out, policy, family, ns, steps, tol, jobs);
        if cfg.seed.is_none() {
            if let Ok(s) = std::env::var(SEED_ENV) {
                cfg.seed = Some(
                    s.trim().parse().map_err(|_| Error::InvalidParameter(format!("{SEED_ENV}=`{s}` is not a seed")))?,
                );
            }
        }
        Ok(cfg)
    }

    fn model_name(&self) -> Result<&str, Error> {
        self.model.as_deref().ok_or_else(|| {
            Error::InvalidParameter(format!("--model is required (one of {})", MODEL_NAMES.join(", ")))
        })
    }

    fn overrides(&self) -> BTreeMap<String, f64> {
        let mut o = self.set.clone();
        if let Some(b) = self.beta {
            o.insert("beta".into(), b);
        }
        if let Some(t) = self.horizon {
            o.insert("T".into(), t);
        }
        o
    }

    fn build(&self) -> Result<ModelSpec, Error> {
        registry_get(self.model_name()?, &self.overrides())
    }

    fn seed(&self) -> Result<u64, Error> {
        self.seed.ok_or_else(|| Error::InvalidParameter(format!("this command needs --seed or {SEED_ENV}")))
    }

    fn n(&self) -> Result<u64, Error> {
        self.n.ok_or_else(|| Error::InvalidParameter("--N is required".into()))
    }

    fn out(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }

    fn steps(&self) -> usize {
        self.steps.unwrap_or(DEFAULT_STEPS)
    }
}

fn validated_path(path: RelaxedControlPath, model: &ModelSpec) -> Result<RelaxedControlPath, Error> {
    let path = RelaxedControlPath::new(path.breakpoints().to_vec(), path.segments().to_vec(), path.end())?;
    for prof in path.segments() {
        model.check_profile(prof)?;
    }
    Ok(path)
}

fn read_path(file: &str, model: &ModelSpec) -> Result<RelaxedControlPath, Error> {
    let path: RelaxedControlPath = serde_json::from_str(&fs::read_to_string(file)?)?;
    validated_path(path, model)
}

fn feedback_rule(name: &str, model: &ModelSpec) -> Result<FeedbackRule, Error> {
    match name {
        "priority" => priority_rule(model),
        "fluid_priority" => fluid_priority_rule(model),
        other => Err(Error::UnsupportedPolicy(format!("unknown feedback rule `{other}`"))),
    }
}

fn policy(cfg: &RunConfig, model: &ModelSpec) -> Result<Policy, Error> {
    let desc = cfg.policy.as_deref().unwrap_or("reference");
    match desc.split_once(':') {
        None if desc == "reference" => Ok(Policy::OpenLoop(reference_control(model)?)),
        Some(("open_loop", file)) => Ok(Policy::OpenLoop(read_path(file, model)?)),
        Some(("jump_adapted", file)) => Ok(Policy::jump_adapted(read_path(file, model)?)),
        Some(("feedback", name)) => Ok(Policy::Feedback(feedback_rule(name, model)?)),
        _ => Err(Error::UnsupportedPolicy(format!("cannot parse policy `{desc}`"))),
    }
}

fn summary(line: &str) {
    println!("{line}");
}

fn cmd_validate(cfg: &RunConfig) -> Result<u8, Error> {
    let model = build_unchecked(cfg.model_name()?, &cfg.overrides())?;
    let rep = validate_assumptions(&model, &default_probe_grid(model.num_states(), 8), 1e-12);
    println!("{}", serde_json::to_string_pretty(&rep)?);
    if let Some(dir) = &cfg.out {
        fs::create_dir_all(dir)?;
        write_json(&dir.join(format!("validate_{}.json", model.name)), &rep)?;
    }
    Ok(if !rep.q1_pass || !rep.q2_pass {
        2
    } else if !rep.passed() {
        1
    } else {
        0
    })
}

fn cmd_simulate(cfg: &RunConfig) -> Result<u8, Error> {
    let model = cfg.build()?;
    let n = cfg.n()?;
    let seed = cfg.seed()?;
    let pol = policy(cfg, &model)?;
    let mu0 = EmpiricalMeasure::rounded(&model.initial, n)?;
    let dir = cfg.out("simulate-out");
    fs::create_dir_all(&dir)?;
    let tr = simulate(&model, &mu0, &pol, seed)?;
    write_trajectory(&dir.join(format!("simulate_{}_{n}.csv", model.name)), &model.name, &tr, model.states.labels())?;
    let reps = cfg.replications.unwrap_or(1);
    let est = if reps > 1 {
        monte_carlo_value(&model, &mu0, &pol, reps, seed)?
    } else {
        McEstimate::from_values(vec![discounted_reward(&model, &tr)?])
    };
    write_json(&dir.join(format!("simulate_{}_{n}_value.json", model.name)), &est)?;
    summary(&format!(
        "simulate {} N={n}: {} jumps on the first path; value {:.6} +/- {:.6} over {} replication(s)",
        model.name,
        tr.num_jumps(),
        est.mean,
        est.se,
        est.values.len()
    ));
    Ok(0)
}

#[derive(Serialize)]
struct ExactMeta {
    model: String,
    n: u64,
    beta: f64,
    solver: &'static str,
    tol: Option<f64>,
    iterations: Option<usize>,
    lambda_bar: Option<f64>,
    steps: Option<usize>,
    value_at_initial: f64,
}

fn cmd_exact(cfg: &RunConfig) -> Result<u8, Error> {
    let model = cfg.build()?;
    let n = cfg.n()?;
    let mu0 = EmpiricalMeasure::rounded(&model.initial, n)?;
    let labels = model.states.labels();
    let dir = cfg.out("exact-out");
    fs::create_dir_all(&dir)?;
    let (table, meta) = match model.horizon.finite() {
        None => {
            if cfg.policy.is_some() {
                return Err(Error::UnsupportedPolicy("policy evaluation needs a finite horizon".into()));
            }
            let tol = cfg.tol.unwrap_or(1e-10);
            let vt = value_iteration(&model, n, tol)?;
            let v0 = vt.value_at(&mu0).expect("rounded measure lies on the lattice");
            let meta = ExactMeta {
                model: model.name.clone(),
                n,
                beta: model.beta,
                solver: "value_iteration",
                tol: Some(tol),
                iterations: Some(vt.iterations),
                lambda_bar: Some(vt.lambda_bar),
                steps: None,
                value_at_initial: v0,
            };
            (value_table(&vt.lattice, &vt.values, vt.policy.as_deref(), labels), meta)
        }
        Some(end) => {
            let bound = n as f64 * (model.num_states() as f64 - 1.0) * model.q_max();
            let mut h = end / cfg.steps() as f64;
            if bound > 0.0 {
                h = h.min(0.4 / bound);
            }
            let (tv, solver) = match &cfg.policy {
                None => {
                    let grid = TimeGrid::uniform(end, (end / h).ceil() as usize)?;
                    (finite_horizon_solve(&model, n, &grid)?, "finite_horizon_solve")
                }
                Some(_) => {
                    let pol = policy(cfg, &model)?;
                    let grid = match &pol {
                        Policy::OpenLoop(p) | Policy::JumpAdapted { path: p, .. } => TimeGrid::for_control(p, end, h)?,
                        Policy::Feedback(_) => TimeGrid::uniform(end, (end / h).ceil() as usize)?,
                    };
                    (policy_evaluation(&model, n, &pol, &grid)?, "policy_evaluation")
                }
            };
            let v0 = tv.value_at(&mu0).expect("rounded measure lies on the lattice");
            let first_policy = tv.policy.as_ref().and_then(|p| p.first()).map(|p| p.as_slice());
            let meta = ExactMeta {
                model: model.name.clone(),
                n,
                beta: model.beta,
                solver,
                tol: None,
                iterations: None,
                lambda_bar: None,
                steps: Some(tv.times.len() - 1),
                value_at_initial: v0,
            };
            (value_table(&tv.lattice, &tv.values, first_policy, labels), meta)
        }
    };
    write_table(&dir.join(format!("exact_{}_{n}.csv", model.name)), &table)?;
    write_json(&dir.join(format!("exact_{}_{n}.json", model.name)), &meta)?;
    summary(&format!(
        "exact {} N={n} ({}): {} lattice points; value at the initial measure {:.9}",
        model.name,
        meta.solver,
        table.rows.len(),
        meta.value_at_initial
    ));
    Ok(0)
}

fn cmd_limit(cfg: &RunConfig) -> Result<u8, Error> {
    let model = cfg.build()?;
    let end = model.time_end()?;
    let dir = cfg.out("limit-out");
    fs::create_dir_all(&dir)?;
    let (sol, control) = match policy(cfg, &model)? {
        Policy::OpenLoop(p) | Policy::JumpAdapted { path: p, .. } => {
            let grid = TimeGrid::for_control(&p, end, end / cfg.steps() as f64)?;
            (solve(&model, &model.initial, &p, &grid)?, p)
        }
        Policy::Feedback(rule) => {
            integrate_limit_feedback(&model, &model.initial, &rule, &TimeGrid::uniform(end, cfg.steps())?)?
        }
    };
    write_table(&dir.join(format!("limit_{}.csv", model.name)), &limit_table(&sol.trajectory, Some(&control), model.states.labels()))?;
    write_json(&dir.join(format!("limit_{}.json", model.name)), &sol)?;
    summary(&format!(
        "limit {}: objective {:.9}; final state {:?}",
        model.name,
        sol.value,
        sol.trajectory.last().iter().map(|x| (x * 1e6).round() / 1e6).collect::<Vec<_>>()
    ));
    Ok(0)
}

fn cmd_optimize(cfg: &RunConfig) -> Result<u8, Error> {
    let model = cfg.build()?;
    let end = model.horizon.finite().ok_or(Error::FiniteHorizonRequired)?;
    let family = cfg.family.as_deref().unwrap_or("one_switch");
    let result = if family == "direct" {
        let init = uniform_segments(&model.default_profile(), end, 40)?;
        let grid = TimeGrid::uniform(end, cfg.steps())?;
        optimize_direct(&model, &model.initial, &grid, &init, &DirectOptions::default())?
    } else {
        let fam = SwitchingFamily::for_model(&model, family)?;
        let mut bounds = fam.default_bounds(end);
        bounds.steps = cfg.steps();
        optimize_switching(&model, &fam, &bounds)?
    };
    let dir = cfg.out("optimize-out");
    fs::create_dir_all(&dir)?;
    write_json(&dir.join(format!("optimize_{}_{family}.json", model.name)), &result)?;
    write_json(&dir.join(format!("optimize_{}_{family}_control.json", model.name)), &result.control)?;
    write_table(
        &dir.join(format!("optimize_{}_{family}.csv", model.name)),
        &limit_table(&result.trajectory, Some(&result.control), model.states.labels()),
    )?;
    let params = if family == "direct" {
        format!("breakpoints {:?}", result.control.discontinuities())
    } else {
        let names: &[&str] = if result.parameters.len() == 1 { &["t1"] } else { &["t1", "u", "t2"] };
        names.iter().zip(&result.parameters).map(|(n, v)| format!("{n} = {v:.6}")).collect::<Vec<_>>().join(", ")
    };
    summary(&format!("optimize {} {family}: {params}; objective {:.9}", model.name, result.value));
    if result.diagnostics.bracket_failure {
        eprintln!("warning: objective was not unimodal on the coarse grid; used the dense grid maximum");
    }
    Ok(0)
}

fn cmd_study(cfg: &RunConfig, kind: StudyKind) -> Result<u8, Error> {
    let seed = cfg.seed()?;
    let model = cfg.build()?;
    let dir = cfg.out("study-out");
    match kind {
        StudyKind::Rate => {
            let control = match policy(cfg, &model)? {
                Policy::OpenLoop(p) => p,
                _ => return Err(Error::UnsupportedPolicy("the rate study needs an open-loop control".into())),
            };
            let ns = cfg.ns.clone().unwrap_or_else(|| vec![10, 20, 40, 80, 160, 320]);
            let mode = match cfg.replications {
                Some(r) => RateMode::MonteCarlo { replications: r },
                None if model.num_states() == 2 => RateMode::Exact,
                None => RateMode::MonteCarlo { replications: 200 },
            };
            let r = rate_study(&model, &control, &ns, mode, seed)?;
            write_study_dir(&dir, "rate", &model.name, &r, &r.files())?;
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            summary(&format!(
                "study rate {}: V^F {:.9}; slope {}; max sqrt(N) gap {:.3e}, median {:.3e}",
                model.name,
                r.limit_value,
                r.slope.map_or("undefined".to_string(), |s| format!("{s:.4}")),
                r.max_scaled_gap,
                r.median_scaled_gap
            ));
        }
        StudyKind::Equivalence => {
            let n = cfg.n.unwrap_or(2);
            let r = equivalence_study(&model, n, cfg.replications.unwrap_or(2000), seed)?;
            write_study_dir(&dir, "equivalence", &model.name, &r, &[])?;
            let (j, m) = (r.joint.as_ref(), r.measure.as_ref());
            summary(&format!(
                "study equivalence {} N={n}: exact {:.6}; joint {}; measure {}; identity error {:.1e}",
                model.name,
                r.exact_value,
                j.map_or("-".into(), |e| format!("{:.6} +/- {:.6}", e.mean, e.se)),
                m.map_or("-".into(), |e| format!("{:.6} +/- {:.6}", e.mean, e.se)),
                r.identity_max_error
            ));
        }
        StudyKind::Nonuniqueness => {
            let ns = cfg.ns.clone().unwrap_or_else(|| vec![100, 10_001]);
            let (even, odd) = match ns.as_slice() {
                [a, b] => (*a, *b),
                _ => return Err(Error::InvalidParameter("--Ns takes an even and an odd N".into())),
            };
            let r = nonuniqueness_demo(&model, even, odd, 1.0f64.min(model.time_end()?), seed)?;
            write_study_dir(&dir, "nonuniqueness", &model.name, &r, &r.files(&model))?;
            summary(&format!(
                "study nonuniqueness: N={even} path identically zero: {}; N={odd} sup distance to the branch {:.4}",
                r.even_identically_zero, r.odd_distance
            ));
        }
        StudyKind::Feedback => {
            let ns = cfg.ns.clone().unwrap_or_else(|| vec![350, 1400, 5600]);
            let r = feedback_nonconvergence_demo(&model, &ns, cfg.replications.unwrap_or(10), seed)?;
            write_study_dir(&dir, "feedback", &model.name, &r, &r.files(&model))?;
            for row in &r.rows {
                summary(&format!(
                    "study feedback N={}: open-loop distance {:.4}, feedback distance {:.4}",
                    row.n, row.open_loop_distance, row.feedback_distance
                ));
            }
        }
    }
    Ok(0)
}

fn cmd_replicate(cfg: &RunConfig, example: Option<&str>) -> Result<u8, Error> {
    let seed = cfg.seed()?;
    let example = example.or(cfg.model.as_deref()).ok_or_else(|| {
        Error::InvalidParameter(format!("--example is required (one of {})", FIGURE_EXAMPLES.join(", ")))
    })?;
    let dir = cfg.out("figures-out").join(example);
    let files = replicate_figures(example, seed, &dir)?;
    summary(&format!("replicate-figures {example}: wrote {} files to {}", files.len(), dir.display()));
    Ok(0)
}

fn run(cli: &Cli) -> Result<u8, Error> {
    let cfg = RunConfig::resolve(&cli.args)?;
    if cli.args.dry_run {
        #[derive(Serialize)]
        struct DryRun<'a> {
            command: String,
            config: &'a RunConfig,
        }
        let command = format!("{:?}", cli.command).to_lowercase();
        println!("{}", serde_json::to_string_pretty(&DryRun { command, config: &cfg })?);
        return Ok(0);
    }
    if let Some(jobs) = cfg.jobs {
        // Only fails if a pool exists already, in which case it is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global();
    }
    match &cli.command {
        Command::Validate => cmd_validate(&cfg),
        Command::Simulate => cmd_simulate(&cfg),
        Command::Exact => cmd_exact(&cfg),
        Command::Limit => cmd_limit(&cfg),
        Command::Optimize => cmd_optimize(&cfg),
        Command::Study { kind } => cmd_study(&cfg, *kind),
        Command::ReplicateFigures { example } => cmd_replicate(&cfg, example.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}: {e}", e.name());
            ExitCode::from(1)
        }
    }
}
