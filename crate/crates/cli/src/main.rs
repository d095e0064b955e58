use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use botw_core::harness::{self, ExperimentConfig, RunOverrides, VerifyOptions};
use botw_core::learner::FaultInjection;
use botw_core::oracles::render_reports;

#[derive(Parser)]
#[command(name = "botw", version, about = "Best-of-three-worlds linear bandit experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of an experiment config.
    Run {
        config: PathBuf,
        /// Run only this seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Run only this horizon.
        #[arg(long)]
        horizon: Option<u64>,
        /// Root for the output directory (overrides BOTW_OUTPUT_ROOT).
        #[arg(long)]
        output_root: Option<PathBuf>,
    },
    /// Run the lemma verifiers.
    Verify {
        /// Suites to run, e.g. `gauge,tracking` (default: all).
        #[arg(long = "suite", num_args = 0..)]
        suites: Option<Vec<String>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print reports as JSON instead of a table.
        #[arg(long)]
        json: bool,
        /// Fewer samples and shorter runs.
        #[arg(long)]
        quick: bool,
        /// Mutation: add this to the estimator scale d.
        #[arg(long, default_value_t = 0.0)]
        inject_estimator_offset: f64,
        /// Mutation: replace the 6 in beta's 6d floor.
        #[arg(long)]
        inject_beta_floor: Option<f64>,
    },
    /// Compare summary files across modes.
    Compare {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Write the comparison as CSV here as well.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run { config, seed, horizon, output_root } => {
            let mut overrides = RunOverrides::from_env();
            overrides.seed = seed;
            overrides.horizon = horizon;
            if output_root.is_some() {
                overrides.output_root = output_root;
            }
            let cfg = ExperimentConfig::load(&config)
                .and_then(|c| c.with_overrides(&overrides))
                .with_context(|| format!("loading {}", config.display()))?;
            let outcome = harness::run(&cfg)?;
            for r in &outcome.results {
                if let Some(f) = &r.failure {
                    eprintln!("cell {} seed {} aborted: {f}", r.instance, r.seed);
                }
                if let Some(v) = &r.first_violation {
                    eprintln!("cell {} seed {} invariant: {v}", r.instance, r.seed);
                }
            }
            println!("{} cells, summary at {}", outcome.results.len(), outcome.summary_path.display());
            Ok(if outcome.failures() > 0 { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
        Command::Verify { suites, seed, json, quick, inject_estimator_offset, inject_beta_floor } => {
            let mut options = VerifyOptions { seed, ..Default::default() };
            if let Some(items) = suites {
                options.suites = harness::parse_suites(&items).map_err(anyhow::Error::msg)?;
            }
            if quick {
                options.tracking_traces = 8;
                options.tracking_horizon = 500;
                options.unbiasedness_samples = 50_000;
                options.invariant_horizon = 500;
            }
            options.faults = FaultInjection {
                estimator_scale_offset: inject_estimator_offset,
                beta_floor_factor: inject_beta_floor.unwrap_or(FaultInjection::default().beta_floor_factor),
            };
            let outcome = harness::verify(&options);
            if let Some(w) = &outcome.warning {
                eprintln!("warning: {w}");
            }
            if json {
                println!("{}", serde_json::to_string_pretty(&outcome.reports)?);
            } else {
                print!("{}", render_reports(&outcome.reports));
            }
            Ok(if outcome.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Compare { files, csv } => {
            let rows = harness::compare(&files)?;
            print!("{}", harness::render_comparison(&rows));
            if let Some(path) = csv {
                let mut w = ::csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
                for r in &rows {
                    w.serialize(r)?;
                }
                w.flush()?;
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
