use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use botw_core::environments::instance_catalog;
use botw_core::learner::{check_round_invariants, Learner, LearnerConfig, Mode, RoundRecord};
use botw_core::Environment;

const INSTANCES: [&str; 4] =
    ["hypercube-stoch(2, 0.3, 0.1)", "square-adversarial-alternating", "square-corrupted(50)", "simplex-stoch(3, 0.1)"];

fn play(instance: &str, mode: Mode, horizon: u64, seed: u64) -> Vec<RoundRecord> {
    let (set, spec) = instance_catalog(instance).unwrap();
    let mut env = Environment::new(spec, &set).unwrap();
    let mut learner = Learner::new(set, LearnerConfig::new(horizon, mode, seed)).unwrap();
    let mut out = Vec::new();
    while !learner.is_finished() {
        out.push(learner.step(&mut env).unwrap());
    }
    out
}

fn modes() -> impl Strategy<Value = Mode> {
    prop_oneof![Just(Mode::ScaledUp), Just(Mode::Baseline)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn invariants_hold_every_round(idx in 0usize..4, mode in modes(), seed in any::<u64>()) {
        let (set, spec) = instance_catalog(INSTANCES[idx]).unwrap();
        let mut env = Environment::new(spec, &set).unwrap();
        let mut learner = Learner::new(set.clone(), LearnerConfig::new(300, mode, seed)).unwrap();
        let mut last_beta = 0.0;
        while !learner.is_finished() {
            let before = learner.state().stability_sum;
            let r = learner.step(&mut env).unwrap();
            let found = check_round_invariants(&r, before, &set, learner.barrier());
            prop_assert!(found.is_empty(), "{:?}", found);
            prop_assert!(r.beta >= last_beta);
            last_beta = r.beta;
            prop_assert!(r.ratio > 0.0 && r.ratio <= 1.0);
            if mode == Mode::Baseline {
                prop_assert_eq!(r.ratio, 1.0);
                prop_assert!(r.reference.is_none());
            }
            prop_assert!(r.observed.abs() <= 1.0);
            prop_assert!(set.membership(&r.action_vector, 1e-12));
        }
    }

    #[test]
    fn runs_are_reproducible(idx in 0usize..4, mode in modes(), seed in any::<u64>()) {
        let a = play(INSTANCES[idx], mode, 60, seed);
        let b = play(INSTANCES[idx], mode, 60, seed);
        prop_assert_eq!(a, b);
    }
}

#[test]
fn different_seeds_diverge() {
    let a = play(INSTANCES[0], Mode::ScaledUp, 100, 1);
    let b = play(INSTANCES[0], Mode::ScaledUp, 100, 2);
    assert_ne!(a.iter().map(|r| r.action).collect::<Vec<_>>(), b.iter().map(|r| r.action).collect::<Vec<_>>());
}

#[test]
fn baseline_exploration_axes_are_uniform() {
    // each (axis, sign) pair is equally likely on exploration rounds
    let records = play("simplex-stoch(3, 0.1)", Mode::Baseline, 6000, 11);
    let mut counts = [0u64; 6];
    for r in records.iter().filter(|r| r.explore) {
        let (axis, eps) = r.direction.unwrap();
        counts[2 * axis + usize::from(eps < 0)] += 1;
    }
    let n: u64 = counts.iter().sum();
    assert!(n > 500, "only {n} exploration rounds");
    let expected = n as f64 / 6.0;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(5.0).unwrap().cdf(stat);
    assert!(p > 1e-3, "chi-square {stat} (p = {p}) for counts {counts:?}");
}

#[test]
fn horizon_one_plays_a_single_round() {
    let records = play(INSTANCES[0], Mode::ScaledUp, 1, 0);
    assert_eq!(records.len(), 1);
    assert!(records[0].beta.is_finite());
}
