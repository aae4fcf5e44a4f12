//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). A failing criterion is
//! printed as FAIL and the run still exits 0 so that the report is always
//! complete; set `ACCEPTANCE_STRICT=1` to turn any FAIL into a non-zero exit.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mfctmdp::exact::{bellman_operator, policy_evaluation, value_iteration, SimplexLattice};
use mfctmdp::experiments::{
    equivalence_study, feedback_nonconvergence_demo, fluid_priority_rule, nonuniqueness_demo, rate_study, sup_tv_distance,
    RateMode,
};
use mfctmdp::limit::{
    adjoint_integrate, default_grid, integrate_limit, integrate_limit_feedback, optimize_switching, pontryagin_residual,
    OptimizeResult, SwitchingFamily,
};
use mfctmdp::model::{fixtures, reference_control, registry_get};
use mfctmdp::sim::{
    martingale_residual, monte_carlo_value, replicate, simulate, simulate_joint, simulate_with_rng, JointRule, Policy,
};
use mfctmdp::{ActionDistribution, EmpiricalMeasure, ModelSpec, RelaxedControlPath, TimeGrid};

use common::{birth_death_generator, brute_force_bellman, policy_value_linear, solve_linear};

const SEED: u64 = 20_240_601;

type Outcome = (bool, String);

fn model(name: &str) -> ModelSpec {
    registry_get(name, &BTreeMap::new()).unwrap()
}

fn model_with(name: &str, key: &str, value: f64) -> ModelSpec {
    let mut o = BTreeMap::new();
    o.insert(key.to_string(), value);
    registry_get(name, &o).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn equivalence() -> Outcome {
    const REPS: usize = 2000;
    let m = fixtures::two_state_two_action();
    let mut ok = true;
    let mut detail = Vec::new();
    for n in 1..=3u64 {
        let r = equivalence_study(&m, n, REPS, SEED + n).unwrap();
        let (zj, zm, zjm) = r.z_scores().unwrap();
        // The VI policy's value by a direct linear solve on the same lattice.
        let table = value_iteration(&m, n, 1e-12).unwrap();
        let d = m.num_states();
        let pol = table.policy.clone().unwrap();
        let linear = policy_value_linear(&m, &table.lattice, &|p| pol[p * d..(p + 1) * d].iter().map(|&k| k as usize).collect());
        let lin_err = max_abs_diff(&linear, &table.values);
        let pass = r.identity_max_error <= 1e-12 && zj <= 3.0 && zm <= 3.0 && zjm <= 3.0 && lin_err <= 1e-8;
        ok &= pass;
        detail.push(format!(
            "N={n}: identity {:.1e}, exact {:.6}, joint {:.6}±{:.4}, measure {:.6}±{:.4}, z=({zj:.2},{zm:.2},{zjm:.2}), linear {lin_err:.1e}",
            r.identity_max_error,
            r.exact_value,
            r.joint.as_ref().unwrap().mean,
            r.joint.as_ref().unwrap().se,
            r.measure.as_ref().unwrap().mean,
            r.measure.as_ref().unwrap().se,
        ));
    }
    (ok, detail.join("; "))
}

fn bellman() -> Outcome {
    // Uncontrolled birth-death with N = 2.
    let (up, down, beta) = (0.7, 1.3, 0.4);
    let m = fixtures::birth_death(up, down, beta);
    let table = value_iteration(&m, 2, 1e-12).unwrap();
    let q = birth_death_generator(&table.lattice, up, down);
    let size = table.lattice.size();
    let a: Vec<Vec<f64>> = (0..size)
        .map(|p| (0..size).map(|k| if p == k { beta } else { 0.0 } - q[p][k]).collect())
        .collect();
    let r: Vec<f64> = (0..size).map(|p| table.lattice.point(p)[1] as f64 / 2.0).collect();
    let v = solve_linear(a, r);
    let lin_err = max_abs_diff(&v, &table.values);

    // Product-action enumeration on several lattices.
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mr = {
        let mut o = BTreeMap::new();
        o.insert("beta".to_string(), 0.5);
        o.insert("T".to_string(), f64::INFINITY);
        registry_get("machine_replacement", &o).unwrap()
    };
    let cases: Vec<(ModelSpec, u64)> = vec![
        (fixtures::two_state_two_action(), 10),
        (fixtures::smooth_cycle(1.0), 12),
        (fixtures::smooth_cycle(1.0), 40),
        (mr, 50),
    ];
    let mut brute_err = 0.0f64;
    let mut points = Vec::new();
    for (m, n) in &cases {
        let lattice = SimplexLattice::enumerate(*n, m.num_states()).unwrap();
        assert!(lattice.size() <= 1000);
        points.push(lattice.size());
        let v: Vec<f64> = (0..lattice.size()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (tv, _) = bellman_operator(m, &lattice, &v).unwrap();
        brute_err = brute_err.max(max_abs_diff(&tv, &brute_force_bellman(m, &lattice, &v)));
    }
    (
        lin_err <= 1e-8 && brute_err <= 1e-12,
        format!("linear solve {lin_err:.1e} (tol 1e-8); brute force {brute_err:.1e} on lattices {points:?} (tol 1e-12)"),
    )
}

fn martingale() -> Outcome {
    const REPS: usize = 200;
    let times = [0.5, 1.0, 2.0];
    let slack = 1.0 + 3.0 / (REPS as f64).sqrt();
    let mut ok = true;
    let mut detail = Vec::new();
    for name in ["cube_root", "machine_replacement"] {
        let m = model(name);
        let control = reference_control(&m).unwrap();
        let policy = Policy::OpenLoop(control);
        let q_max = m.q_max();
        for n in [100u64, 1000] {
            let mu0 = if name == "cube_root" {
                EmpiricalMeasure::new(vec![1, n - 1]).unwrap()
            } else {
                EmpiricalMeasure::rounded(&m.initial, n).unwrap()
            };
            let d = m.num_states();
            let squares = replicate(REPS, SEED ^ n, |rng| {
                let tr = simulate_with_rng(&m, &mu0, &policy, rng)?;
                let mut out = vec![vec![0.0; times.len()]; d];
                for (j, row) in out.iter_mut().enumerate() {
                    let res = martingale_residual(&m, &tr, j, &times)?;
                    for (o, v) in row.iter_mut().zip(res.values) {
                        *o = v * v;
                    }
                }
                Ok(out)
            })
            .unwrap();
            let mut worst = 0.0f64;
            for (k, &t) in times.iter().enumerate() {
                let bound = q_max * t / n as f64 * slack;
                for j in 0..d {
                    let mean = squares.iter().map(|s| s[j][k]).sum::<f64>() / REPS as f64;
                    worst = worst.max(mean / bound);
                }
            }
            ok &= worst <= 1.0;
            detail.push(format!("{name} N={n}: max E[M^2]/bound {worst:.3}"));
        }
    }
    (ok, detail.join("; "))
}

fn sir() -> Outcome {
    let m = model("sir_malware");
    let end = m.time_end().unwrap();
    let family = SwitchingFamily::for_model(&m, "one_switch").unwrap();
    let best = optimize_switching(&m, &family, &family.default_bounds(end)).unwrap();
    let t1 = best.parameters[0];
    let sol = mfctmdp::limit::solve(&m, &m.initial, &best.control, &default_grid(&m, &best.control).unwrap()).unwrap();
    let mu0 = EmpiricalMeasure::rounded(&m.initial, 1000).unwrap();
    let policy = Policy::OpenLoop(best.control.clone());
    let dists: Vec<f64> = (0..10)
        .map(|k| sup_tv_distance(&simulate(&m, &mu0, &policy, SEED + k).unwrap(), &sol.trajectory, end))
        .collect();
    let worst = dists.iter().copied().fold(0.0, f64::max);
    let t1_ok = (t1 - 4.9).abs() <= 0.1;
    (
        t1_ok && worst <= 0.05,
        format!(
            "t1 = {t1:.4} (target 4.9 +/- 0.1, {}), value {:.6}, bracket failure {}; N=1000 max sup-TV over 10 paths {worst:.4} (tol 0.05)",
            if t1_ok { "ok" } else { "off" },
            best.value,
            best.diagnostics.bracket_failure
        ),
    )
}

fn mr_best(m: &ModelSpec) -> OptimizeResult {
    let end = m.time_end().unwrap();
    let family = SwitchingFamily::for_model(m, "three_phase").unwrap();
    optimize_switching(m, &family, &family.default_bounds(end)).unwrap()
}

fn machine_replacement() -> Outcome {
    let m = model("machine_replacement");
    let end = m.time_end().unwrap();
    let best = mr_best(&m);
    let value_ok = (3.3..=3.6).contains(&best.value);

    let n = 1000;
    let mu0 = EmpiricalMeasure::rounded(&m.initial, n).unwrap();
    let policy = Policy::OpenLoop(best.control.clone());
    let mc = monte_carlo_value(&m, &mu0, &policy, 10, SEED).unwrap();
    let h = (end / 2000.0).min(0.4 / (n as f64 * (m.num_states() as f64 - 1.0) * m.q_max()));
    let grid = TimeGrid::for_control(&best.control, end, h).unwrap();
    let exact = policy_evaluation(&m, n, &policy, &grid).unwrap().value_at(&mu0).unwrap();
    let mc_ok = (mc.mean - exact).abs() <= 3.0 * mc.se && (3.3..=3.5).contains(&mc.mean);

    let grid = TimeGrid::for_control(&best.control, end, end / 2000.0).unwrap();
    let traj = integrate_limit(&m, &m.initial, &best.control, &grid).unwrap();
    let adj = adjoint_integrate(&m, &best.control, &grid).unwrap();
    let res = pontryagin_residual(&m, &best.control, &traj, &adj).unwrap();
    let off = res.max_away_from(&best.control.discontinuities(), 1.5 * grid.max_step());
    let res_ok = off <= 1e-4;

    let m_b = model_with("machine_replacement", "repair_cost_mode", 1.0);
    let best_b = mr_best(&m_b);
    let closed_form = 4.5 - 1.5 * std::f64::consts::LN_2;
    (
        value_ok && mc_ok && res_ok,
        format!(
            "per-unit-of-repair cost: best {:.6} at {:?} (target [3.3, 3.6]); MC N=1000 {:.6} +/- {:.2e} vs exact {:.6}; \
             residual off switches {off:.1e}. Per-repaired-machine cost: best {:.6} at {:?}. Closed form 9/2 - (3/2)ln2 = {closed_form:.6}",
            best.value,
            round_params(&best.parameters),
            mc.mean,
            mc.se,
            exact,
            best_b.value,
            round_params(&best_b.parameters),
        ),
    )
}

fn round_params(p: &[f64]) -> Vec<f64> {
    p.iter().map(|x| (x * 1e4).round() / 1e4).collect()
}

fn rate() -> Outcome {
    let m = model("machine_replacement");
    let control = reference_control(&m).unwrap();
    let ns = [10, 20, 40, 80, 160, 320];
    let r = rate_study(&m, &control, &ns, RateMode::Exact, SEED).unwrap();
    let slope_ok = r.slope.is_some_and(|s| (-0.75..=-0.25).contains(&s));
    let spread_ok = r.max_scaled_gap <= 2.0 * r.median_scaled_gap;
    let gaps: Vec<String> = r.rows.iter().map(|row| format!("{}:{:.2e}", row.n, row.signed_gap)).collect();
    (
        slope_ok && spread_ok,
        format!(
            "V^F {:.9}; gaps {}; slope {:?}; max sqrt(N) gap {:.2e}, median {:.2e}",
            r.limit_value,
            gaps.join(" "),
            r.slope,
            r.max_scaled_gap,
            r.median_scaled_gap
        ),
    )
}

fn nonuniqueness() -> Outcome {
    let m = model("cube_root");
    let r = nonuniqueness_demo(&m, 100, 10_001, 1.0, SEED).unwrap();
    (
        r.even_identically_zero && r.odd_distance <= 0.05,
        format!(
            "even N=100 identically zero: {}; odd N=10001 sup distance on [0, 1]: {:.4} (tol 0.05)",
            r.even_identically_zero, r.odd_distance
        ),
    )
}

fn feedback() -> Outcome {
    let m = model("resource_competition");
    let demo = feedback_nonconvergence_demo(&m, &[350, 1400, 5600], 10, SEED).unwrap();
    let ol: Vec<f64> = demo.rows.iter().map(|r| r.open_loop_distance).collect();
    let fb: Vec<f64> = demo.rows.iter().map(|r| r.feedback_distance).collect();
    let decreasing = ol.windows(2).all(|w| w[1] < w[0]);
    let stuck = fb.iter().all(|&d| d > 0.05);
    (
        decreasing && stuck,
        format!("open loop {ol:.4?} (decreasing: {decreasing}); feedback {fb:.4?} (all > 0.05: {stuck})"),
    )
}

fn numerics() -> Outcome {
    // RK4 order on smooth fixtures: ratio of successive differences.
    let mut ratios = Vec::new();
    for horizon in [1.0, 3.0] {
        let m = fixtures::smooth_cycle(horizon);
        let mix = vec![ActionDistribution::new(vec![0.3, 0.7]).unwrap(); 3];
        for control in [
            RelaxedControlPath::constant(m.default_profile(), horizon).unwrap(),
            RelaxedControlPath::constant(mix, horizon).unwrap(),
        ] {
            let sols: Vec<_> = [16usize, 32, 64]
                .iter()
                .map(|&s| mfctmdp::limit::solve(&m, &m.initial, &control, &TimeGrid::uniform(horizon, s).unwrap()).unwrap())
                .collect();
            let e1 = max_abs_diff(sols[0].trajectory.last(), sols[1].trajectory.last());
            let e2 = max_abs_diff(sols[1].trajectory.last(), sols[2].trajectory.last());
            ratios.push(e1 / e2);
            ratios.push((sols[0].value - sols[1].value).abs() / (sols[1].value - sols[2].value).abs());
        }
    }
    let rk4_ok = ratios.iter().all(|r| (8.0..=32.0).contains(r));

    // Contraction of the Bellman operator.
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst_excess = f64::NEG_INFINITY;
    for (m, n) in [(fixtures::two_state_two_action(), 12u64), (fixtures::smooth_cycle(1.0), 10)] {
        let lb = value_iteration(&m, n, 1e-6).unwrap().lambda_bar;
        let factor = lb / (m.beta + lb);
        let lattice = SimplexLattice::enumerate(n, m.num_states()).unwrap();
        for _ in 0..50 {
            let v: Vec<f64> = (0..lattice.size()).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let w: Vec<f64> = (0..lattice.size()).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let tv = bellman_operator(&m, &lattice, &v).unwrap().0;
            let tw = bellman_operator(&m, &lattice, &w).unwrap().0;
            let ratio = max_abs_diff(&tv, &tw) / max_abs_diff(&v, &w);
            worst_excess = worst_excess.max(ratio - factor);
        }
    }
    let contraction_ok = worst_excess <= 1e-12;

    // Conservation of agents in both simulators.
    let mut counts_ok = true;
    for name in ["machine_replacement", "sir_malware", "cube_root"] {
        let m = model(name);
        let policy = Policy::OpenLoop(reference_control(&m).unwrap());
        for n in [7u64, 500] {
            let mu0 = EmpiricalMeasure::rounded(&m.initial, n).unwrap();
            let tr = simulate(&m, &mu0, &policy, SEED + n).unwrap();
            counts_ok &= tr.segments.iter().all(|s| s.counts.iter().sum::<u64>() == n);
        }
    }
    let rc = model("resource_competition");
    let rule = fluid_priority_rule(&rc).unwrap();
    let tr = simulate(&rc, &EmpiricalMeasure::rounded(&rc.initial, 1400).unwrap(), &Policy::Feedback(rule.clone()), SEED).unwrap();
    counts_ok &= tr.segments.iter().all(|s| s.counts.iter().sum::<u64>() == 1400);
    let m2 = fixtures::two_state_two_action();
    let joint = JointRule::new(|k, x, _| ActionDistribution::dirac(2, (k + x[k]) % 2));
    let mut m2f = m2.clone();
    m2f.horizon = mfctmdp::Horizon::Finite(5.0);
    let jt = simulate_joint(&m2f, &[0, 1, 1, 0, 1], &joint, SEED).unwrap();
    counts_ok &= jt.segments.iter().all(|s| s.counts.iter().sum::<u64>() == 5);

    // Conservation in the limit ODE.
    let mut ode_err = 0.0f64;
    for name in ["machine_replacement", "sir_malware", "cube_root"] {
        let m = model(name);
        let c = reference_control(&m).unwrap();
        let traj = integrate_limit(&m, &m.initial, &c, &default_grid(&m, &c).unwrap()).unwrap();
        for s in &traj.states {
            ode_err = ode_err.max((s.iter().sum::<f64>() - 1.0).abs());
        }
    }
    let grid = TimeGrid::uniform(rc.time_end().unwrap(), 2000).unwrap();
    let (sol, _) = integrate_limit_feedback(&rc, &rc.initial, &rule, &grid).unwrap();
    for s in &sol.trajectory.states {
        ode_err = ode_err.max((s.iter().sum::<f64>() - 1.0).abs());
    }
    let ode_ok = ode_err <= 1e-9;

    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.2}")).collect();
    (
        rk4_ok && contraction_ok && counts_ok && ode_ok,
        format!(
            "RK4 ratios [{}]; contraction excess {worst_excess:.1e}; simulator counts exact: {counts_ok}; ODE mass error {ode_err:.1e}",
            shown.join(", ")
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("equivalence", equivalence),
        ("bellman", bellman),
        ("martingale", martingale),
        ("sir", sir),
        ("machine replacement", machine_replacement),
        ("rate", rate),
        ("non-uniqueness", nonuniqueness),
        ("feedback", feedback),
        ("numerics", numerics),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let id = k + 1;
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f));
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match outcome {
            Ok(o) => o,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        if !pass {
            failed += 1;
        }
        println!("criterion {id} ({name}): {} in {secs:.1}s: {detail}", if pass { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {failed} criteria failed");
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
