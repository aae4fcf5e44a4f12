mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;

use mfctmdp::model::{fixtures, lift_profile, reference_control, registry_get, MODEL_NAMES};
use mfctmdp::sim::{
    aggregated_joint_rates, martingale_residual, replicate, simulate, simulate_joint_with_rng, simulate_with_rng,
    system_rates, FeedbackRule, JointRule, Policy, Trajectory,
};
use mfctmdp::{ActionDistribution, EmpiricalMeasure, Horizon, RelaxedControlPath};

use common::{ks_against, ks_statistic};

fn check_single_transfers(tr: &Trajectory) -> Result<(), TestCaseError> {
    for w in tr.segments.windows(2) {
        prop_assert_eq!(w[1].counts.iter().sum::<u64>(), tr.n);
        let diff: Vec<i64> = w[1].counts.iter().zip(&w[0].counts).map(|(a, b)| *a as i64 - *b as i64).collect();
        if w[1].jump {
            prop_assert_eq!(diff.iter().filter(|&&x| x == 1).count(), 1);
            prop_assert_eq!(diff.iter().filter(|&&x| x == -1).count(), 1);
            prop_assert_eq!(diff.iter().filter(|&&x| x != 0).count(), 2);
        } else {
            prop_assert!(diff.iter().all(|&x| x == 0));
        }
        prop_assert!(w[1].start >= w[0].start);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn paths_move_one_agent_at_a_time(model in 0usize..4, n in 1u64..300, seed in any::<u64>()) {
        let m = registry_get(MODEL_NAMES[model], &BTreeMap::new()).unwrap();
        let mu0 = EmpiricalMeasure::rounded(&m.initial, n).unwrap();
        let policy = if m.name == "resource_competition" {
            Policy::Feedback(mfctmdp::experiments::priority_rule(&m).unwrap())
        } else {
            Policy::OpenLoop(reference_control(&m).unwrap())
        };
        let tr = simulate(&m, &mu0, &policy, seed).unwrap();
        prop_assert_eq!(&tr.segments[0].counts, mu0.counts());
        check_single_transfers(&tr)?;
    }

    #[test]
    fn joint_rates_aggregate_to_measure_rates(
        x in prop::collection::vec(0usize..3, 1..7),
        w in prop::collection::vec(0.0f64..1.0, 7),
    ) {
        let m = fixtures::smooth_cycle(1.0);
        let weights = w.clone();
        let rule = JointRule::new(move |k, x, mu| {
            let p = (weights[k] + 0.3 * mu[x[k]]).min(1.0);
            ActionDistribution::new(vec![1.0 - p, p]).unwrap()
        });
        let mu = EmpiricalMeasure::from_joint(&x, 3).unwrap();
        let kernels = rule.kernels(&x, &mu.fractions());
        let lifted = lift_profile(&m.actions, &kernels, &x).unwrap();
        let mut a = vec![0.0; 9];
        for (i, j, r) in aggregated_joint_rates(&m, &x, &rule) {
            a[i * 3 + j] += r;
        }
        let mut b = vec![0.0; 9];
        for (i, j, r) in system_rates(&m, &mu, &lifted) {
            b[i * 3 + j] += r;
        }
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((p - q).abs() <= 1e-12 * (1.0 + p.abs()), "{a:?} vs {b:?}");
        }
    }
}

#[test]
fn frozen_rates_give_exponential_sojourns() {
    // Birth-death with N = 5 from (3, 2): Λ = 3·up + 2·down until the first jump.
    let (up, down) = (0.8, 1.7);
    let mut m = fixtures::birth_death(up, down, 1.0);
    m.horizon = Horizon::Finite(1e3);
    let lambda = 3.0 * up + 2.0 * down;
    let mu0 = EmpiricalMeasure::new(vec![3, 2]).unwrap();
    let policy = Policy::OpenLoop(RelaxedControlPath::constant(m.default_profile(), 1e3).unwrap());
    let reps = 4000;
    let taus = replicate(reps, 77, |rng| {
        let tr = simulate_with_rng(&m, &mu0, &policy, rng)?;
        Ok(tr.segments.iter().find(|s| s.jump).map(|s| s.start).unwrap())
    })
    .unwrap();
    let mean = taus.iter().sum::<f64>() / reps as f64;
    let rel = (mean * lambda - 1.0).abs();
    assert!(rel <= 4.0 / (reps as f64).sqrt(), "mean {mean}, 1/Λ = {}", 1.0 / lambda);
    // One-sample KS at the 1% level.
    let d = ks_against(&taus, |t| 1.0 - (-lambda * t).exp());
    assert!(d <= 1.63 / (reps as f64).sqrt(), "KS {d}");
}

#[test]
fn joint_and_measure_simulators_agree_in_law() {
    // A rule that ignores the agent index lifts to itself, so both
    // simulators describe the same measure process.
    let mut m = fixtures::two_state_two_action();
    m.horizon = Horizon::Finite(1.5);
    let pick = |mu: &[f64]| if mu[0] > 0.5 { 1 } else { 0 };
    let joint_rule = JointRule::new(move |_, _, mu| ActionDistribution::dirac(2, pick(mu)));
    let feedback = FeedbackRule::new("threshold", move |mu| vec![ActionDistribution::dirac(2, pick(mu)); 2]);
    let x0 = vec![0, 0, 1];
    let mu0 = EmpiricalMeasure::from_joint(&x0, 2).unwrap();
    let summary = |tr: &Trajectory| tr.num_jumps() as f64 + tr.final_counts()[0] as f64 / 10.0;
    let reps = 2000;
    let joint = replicate(reps, 5, |rng| Ok(summary(&simulate_joint_with_rng(&m, &x0, &joint_rule, rng)?))).unwrap();
    let policy = Policy::Feedback(feedback);
    let measure = replicate(reps, 6, |rng| Ok(summary(&simulate_with_rng(&m, &mu0, &policy, rng)?))).unwrap();
    // Two-sample KS at the 1% level.
    let d = ks_statistic(&joint, &measure);
    assert!(d <= 1.63 * (2.0 / reps as f64).sqrt(), "KS {d}");
}

#[test]
fn martingale_residual_properties() {
    let m = registry_get("machine_replacement", &BTreeMap::new()).unwrap();
    let policy = Policy::OpenLoop(reference_control(&m).unwrap());
    let n = 200u64;
    let mu0 = EmpiricalMeasure::rounded(&m.initial, n).unwrap();
    let times = [0.0, 0.5, 1.0, 2.0, 3.5];
    let reps = 400;
    let values = replicate(reps, 11, |rng| {
        let tr = simulate_with_rng(&m, &mu0, &policy, rng)?;
        Ok(martingale_residual(&m, &tr, 0, &times)?.values)
    })
    .unwrap();
    for (k, _) in times.iter().enumerate() {
        let xs: Vec<f64> = values.iter().map(|v| v[k]).collect();
        let mean = xs.iter().sum::<f64>() / reps as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps as f64 - 1.0);
        let se = (var / reps as f64).sqrt();
        if k == 0 {
            assert!(xs.iter().all(|&x| x == 0.0));
        } else {
            assert!(mean.abs() <= 3.0 * se, "t = {}: mean {mean}, se {se}", times[k]);
        }
    }

    // Jumps of M are jumps of μ, of height 1/N.
    let tr = simulate(&m, &mu0, &policy, 3).unwrap();
    let eps = 1e-9;
    for s in tr.segments.iter().filter(|s| s.jump) {
        let r = martingale_residual(&m, &tr, 0, &[s.start - eps, s.start]).unwrap();
        let jump = (r.values[1] - r.values[0]).abs();
        let expected = if tr.segment_index(s.start) > 0 {
            let prev = &tr.segments[tr.segment_index(s.start) - 1];
            (s.counts[0] as f64 - prev.counts[0] as f64).abs() / n as f64
        } else {
            0.0
        };
        assert!((jump - expected).abs() < 1e-6, "{jump} vs {expected}");
        assert!(expected == 0.0 || (expected - 1.0 / n as f64).abs() < 1e-15);
    }
}
