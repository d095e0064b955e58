//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;

use botw_core::environments::instance_catalog;
use botw_core::harness::{self, checkpoints, growth_exponent, run_cell, run_cell_with, Suite, VerifyOptions};
use botw_core::learner::{run_rng, FaultInjection, LearnerConfig, Mode};
use botw_core::oracles::{self, UnbiasednessFixture};

const UNBIASED_SAMPLES: u64 = 200_000;
const UNBIASED_ACTION_TOL: f64 = 0.01;
const UNBIASED_ESTIMATE_TOL: f64 = 0.02;
const GAUGE_PAIRS: u64 = 1000;
const GAUGE_TOL: f64 = 1e-9;
const BOUNDGAMMA_TRIALS: u64 = 200;
const BOUNDGAMMA_SLACK: f64 = 1e-6;
const STABILITY_TUPLES: u64 = 500;
const STABILITY_SLACK: f64 = 1e-8;
const TRACKING_TRACES: u64 = 50;
const TRACKING_HORIZON: u64 = 2000;
const TRACKING_SLACK: f64 = 1e-8;
const SOLVER_HORIZON: u64 = 10_000;
const DECREMENT_TOL: f64 = 1e-10;
const SCALING_HORIZON: u64 = 50_000;
const SCALING_SEEDS: u64 = 20;
const STOCHASTIC_MAX_EXPONENT: f64 = 0.35;
const ADVERSARIAL_EXPONENT: (f64, f64) = (0.4, 0.6);
const CORRUPTION_BUDGETS: [u32; 3] = [0, 50, 200];

struct Outcome {
    passed: bool,
    detail: String,
}

fn report(id: u32, name: &str, started: Instant, outcome: &Outcome) {
    println!(
        "[{}] criterion {id}: {name}: {} ({:.1}s)",
        if outcome.passed { "PASS" } else { "FAIL" },
        outcome.detail,
        started.elapsed().as_secs_f64()
    );
}

fn unbiasedness() -> Outcome {
    let mut rng = run_rng(11);
    let mut passed = true;
    let mut parts = Vec::new();
    for mode in [Mode::ScaledUp, Mode::Baseline] {
        let reports = oracles::verify_unbiasedness(&UnbiasednessFixture::hypercube(mode), UNBIASED_SAMPLES, &mut rng);
        let (a, l) = (reports[0].max_violation, reports[1].max_violation);
        passed &= a <= UNBIASED_ACTION_TOL && l <= UNBIASED_ESTIMATE_TOL;
        parts.push(format!("{}: |mean a - x| = {a:.2e}, |mean l_hat - l| = {l:.2e}", mode.name()));
    }
    Outcome { passed, detail: parts.join("; ") }
}

fn gauge() -> Outcome {
    let square = botw_core::geometry::builtin_instance("hypercube", 2).unwrap();
    let mut rng = run_rng(12);
    let on_square = oracles::verify_gauge_bisection(&square, GAUGE_PAIRS, &mut rng);
    let mut worst_random: f64 = 0.0;
    for i in 0..20 {
        let set = oracles::random_polytope(2 + i % 3, &mut rng);
        worst_random = worst_random.max(oracles::verify_gauge_bisection(&set, GAUGE_PAIRS / 20, &mut rng).max_violation);
    }
    Outcome {
        passed: on_square.max_violation <= GAUGE_TOL && worst_random <= GAUGE_TOL,
        detail: format!(
            "max |closed - bisection| = {:.2e} (square), {worst_random:.2e} (random polytopes)",
            on_square.max_violation
        ),
    }
}

fn boundgamma() -> Outcome {
    let (set, spec) = instance_catalog("hypercube-stoch(2, 0.3, 0.1)").unwrap();
    let l = DVector::from_column_slice(spec.true_loss.as_ref().unwrap());
    let r = oracles::verify_boundgamma(&set, &l, BOUNDGAMMA_TRIALS, &mut run_rng(13));
    Outcome {
        passed: r.trials == BOUNDGAMMA_TRIALS && r.max_violation <= BOUNDGAMMA_SLACK,
        detail: format!("{} trials, {}", r.trials, r.note),
    }
}

fn stability() -> Outcome {
    let mut rng = run_rng(14);
    let mut worst = f64::NEG_INFINITY;
    let mut trials = 0;
    for i in 0..20 {
        let set = oracles::random_polytope(2 + i % 3, &mut rng);
        let r = oracles::verify_stability_lemma(&set, STABILITY_TUPLES / 20, &mut rng);
        worst = worst.max(r.max_violation);
        trials += r.trials;
    }
    Outcome {
        passed: trials == STABILITY_TUPLES && worst <= STABILITY_SLACK,
        detail: format!("{trials} tuples, max(lhs - rhs) = {worst:.3e}"),
    }
}

fn tracking() -> Outcome {
    let options = VerifyOptions {
        suites: vec![Suite::Tracking],
        seed: 15,
        tracking_traces: TRACKING_TRACES,
        tracking_horizon: TRACKING_HORIZON,
        ..Default::default()
    };
    let out = harness::verify(&options);
    let passed = out.reports.len() == 3 && out.reports.iter().all(|r| r.max_violation <= TRACKING_SLACK);
    let detail =
        out.reports.iter().map(|r| format!("{}: {:.3e}", r.lemma, r.max_violation)).collect::<Vec<_>>().join(", ");
    Outcome { passed, detail: format!("{TRACKING_TRACES} traces, max(lhs - rhs): {detail}") }
}

fn solver_quality() -> Outcome {
    let mut jobs = Vec::new();
    for name in harness::VERIFY_INSTANCES {
        for mode in [Mode::ScaledUp, Mode::Baseline] {
            jobs.push((name, mode));
        }
    }
    let results: Vec<_> = jobs
        .par_iter()
        .map(|(name, mode)| {
            let (set, spec) = instance_catalog(name).unwrap();
            run_cell_with(name, &set, &spec, &LearnerConfig::new(SOLVER_HORIZON, *mode, 16), true, None)
        })
        .collect();
    let worst = results.iter().map(|r| r.max_decrement).fold(0.0, f64::max);
    let failures = results.iter().filter(|r| r.failure.is_some()).count();
    let violations: u64 = results.iter().map(|r| r.violations).sum();
    let complete = results.iter().all(|r| r.rounds == SOLVER_HORIZON);
    Outcome {
        passed: worst <= DECREMENT_TOL && failures == 0 && violations == 0 && complete,
        detail: format!(
            "{} runs of T = {SOLVER_HORIZON}: max decrement {worst:.2e}, aborted runs {failures}, invariant violations {violations}",
            results.len()
        ),
    }
}

/// Mean regret over seeds at the checkpoints, and the final regrets.
fn scaling_cell(instance: &str, mode: Mode, horizon: u64, seeds: u64) -> (Vec<(u64, f64)>, f64, usize) {
    let (set, spec) = instance_catalog(instance).unwrap();
    let results: Vec<_> = (0..seeds)
        .into_par_iter()
        .map(|seed| run_cell_with(instance, &set, &spec, &LearnerConfig::new(horizon, mode, seed), false, None))
        .collect();
    let failures = results.iter().filter(|r| r.failure.is_some()).count();
    let marks = checkpoints(horizon);
    let curve: Vec<(u64, f64)> = marks
        .iter()
        .enumerate()
        .map(|(k, &t)| (t, results.iter().map(|r| r.checkpoints[k].1).sum::<f64>() / seeds as f64))
        .collect();
    let last = curve.last().unwrap().1;
    (curve, last, failures)
}

fn scaling() -> Outcome {
    let stoch = "hypercube-stoch(2, 0.3, 0.1)";
    let adv = "square-adversarial-alternating";
    let (s_up, s_up_final, f1) = scaling_cell(stoch, Mode::ScaledUp, SCALING_HORIZON, SCALING_SEEDS);
    let (s_base, s_base_final, f2) = scaling_cell(stoch, Mode::Baseline, SCALING_HORIZON, SCALING_SEEDS);
    let (a_up, _, f3) = scaling_cell(adv, Mode::ScaledUp, SCALING_HORIZON, SCALING_SEEDS);
    let (a_base, _, f4) = scaling_cell(adv, Mode::Baseline, SCALING_HORIZON, SCALING_SEEDS);
    let (e_up, e_base) = (growth_exponent(&s_up), growth_exponent(&s_base));
    let (ea_up, ea_base) = (growth_exponent(&a_up), growth_exponent(&a_base));
    let inside = |e: f64| e >= ADVERSARIAL_EXPONENT.0 && e <= ADVERSARIAL_EXPONENT.1;
    Outcome {
        passed: f1 + f2 + f3 + f4 == 0
            && e_up <= STOCHASTIC_MAX_EXPONENT
            && s_up_final <= s_base_final
            && inside(ea_up)
            && inside(ea_base),
        detail: format!(
            "stochastic: exponent {e_up:.3} (baseline {e_base:.3}), final regret {s_up_final:.1} vs baseline {s_base_final:.1}; \
             adversarial exponents {ea_up:.3} (scaled-up), {ea_base:.3} (baseline)"
        ),
    }
}

fn corruption() -> Outcome {
    let seeds: Vec<u64> = (0..SCALING_SEEDS).collect();
    let trace_of = |instance: &str, seed: u64| {
        let (set, spec) = instance_catalog(instance).unwrap();
        let mut buf = Vec::new();
        let cfg = LearnerConfig::new(SCALING_HORIZON, Mode::ScaledUp, seed);
        let r = run_cell(instance, &set, &spec, &cfg, false, &mut buf, None).unwrap();
        (r, buf)
    };
    let identical = seeds
        .par_iter()
        .all(|&s| trace_of("hypercube-stoch(2, 0.3, 0.1)", s).1 == trace_of("square-corrupted(0)", s).1);
    let means: Vec<f64> = CORRUPTION_BUDGETS
        .iter()
        .map(|c| {
            let name = format!("square-corrupted({c})");
            let finals: Vec<f64> = seeds.par_iter().map(|&s| trace_of(&name, s).0.final_regret).collect();
            finals.iter().sum::<f64>() / finals.len() as f64
        })
        .collect();
    let monotone = means.windows(2).all(|w| w[0] <= w[1]);
    Outcome {
        passed: identical && monotone,
        detail: format!(
            "mean final regret for C = {:?}: {:?}; C = 0 trace byte-identical to stochastic: {identical}",
            CORRUPTION_BUDGETS,
            means.iter().map(|m| format!("{m:.1}")).collect::<Vec<_>>()
        ),
    }
}

fn mutations() -> Outcome {
    let base = VerifyOptions {
        suites: vec![Suite::Unbiasedness, Suite::Invariants],
        seed: 17,
        unbiasedness_samples: UNBIASED_SAMPLES,
        invariant_horizon: 2000,
        ..Default::default()
    };
    let clean = harness::verify(&base);
    let scale = harness::verify(&VerifyOptions {
        faults: FaultInjection { estimator_scale_offset: 1.0, ..Default::default() },
        ..base.clone()
    });
    let beta = harness::verify(&VerifyOptions {
        faults: FaultInjection { beta_floor_factor: 2.0, ..Default::default() },
        ..base.clone()
    });
    let failing = |o: &harness::VerifyOutcome| {
        o.reports.iter().filter(|r| !r.passed).map(|r| r.lemma.clone()).collect::<Vec<_>>()
    };
    let (fs, fb) = (failing(&scale), failing(&beta));
    Outcome {
        passed: clean.passed() && !fs.is_empty() && !fb.is_empty(),
        detail: format!(
            "clean run passes: {}; d -> d+1 trips {} checks (e.g. {}); 6d -> 2d trips {} checks (e.g. {})",
            clean.passed(),
            fs.len(),
            fs.first().map_or("none", String::as_str),
            fb.len(),
            fb.first().map_or("none", String::as_str)
        ),
    }
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "unbiasedness", unbiasedness),
        (2, "gauge oracle equivalence", gauge),
        (3, "gauge bound near the optimum", boundgamma),
        (4, "stability lemma", stability),
        (5, "tracking-experts bound", tracking),
        (6, "solver quality", solver_quality),
        (7, "best-of-both-worlds scaling", scaling),
        (8, "corruption robustness", corruption),
        (9, "mutation sensitivity", mutations),
    ];
    let only: Option<u32> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut all = true;
    for (id, name, f) in criteria {
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let started = Instant::now();
        let outcome = f();
        report(id, name, started, &outcome);
        all &= outcome.passed;
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
