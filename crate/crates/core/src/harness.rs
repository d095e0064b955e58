//! Experiment driver: configs, seeded cells, CSV traces, summaries,
//! comparisons and the verification suites.
//!
//! A cell is one `(instance, mode, horizon, seed)` run. Cells share nothing
//! and run in parallel; each writes its own trace file.
//!
//! Trace CSV (`# botw-trace v1`), one row per round:
//! `t, beta, x_1..x_d, z_index, r, b, i, eps, a_index, loss, g, cum_regret,
//! delta_x, corruption, cum_regret_clean, cum_regret_expected`.
//! Empty fields mean "not applicable" (no reference vertex in baseline mode,
//! no direction when `b = 0`, no gap in the adversarial regime).

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environments::{
    instance_catalog, Disclosure, Environment, EnvironmentError, EnvironmentSpec, InstanceDocument, LedgerEntry,
    RegretLedger,
};
use crate::geometry::{builtin_instance, PolytopeActionSet};
use crate::learner::{check_round_invariants, run_rng, FaultInjection, Learner, LearnerConfig, Mode, RoundRecord};
use crate::oracles::{self, ComparatorPath, LemmaReport, TrackingRound, UnbiasednessFixture};

pub const TRACE_HEADER: &str = "# botw-trace v1";
pub const SUMMARY_HEADER: &str = "# botw-summary v1";
/// Environment variable that relocates every output directory.
pub const OUTPUT_ROOT_VAR: &str = "BOTW_OUTPUT_ROOT";
/// Checkpoints as fractions of the horizon.
pub const CHECKPOINT_FRACTIONS: [(u64, u64); 4] = [(1, 8), (1, 4), (1, 2), (1, 1)];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Environment(#[from] EnvironmentError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

fn default_modes() -> Vec<Mode> {
    vec![Mode::ScaledUp, Mode::Baseline]
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationToggles {
    /// Check the per-round invariants during runs.
    #[serde(default = "yes")]
    pub invariants: bool,
    /// Also write each cell's disclosed loss sequence.
    #[serde(default)]
    pub dump_losses: bool,
}

impl Default for VerificationToggles {
    fn default() -> Self {
        VerificationToggles { invariants: true, dump_losses: false }
    }
}

/// Experiment description, read from TOML.
///
/// ```toml
/// output_dir = "out/smoke"
/// seeds = [0, 1, 2]
/// horizons = [1000, 4000]
/// modes = ["scaled-up", "baseline"]     # optional, both by default
/// eta = 0.125                            # optional
/// instances = ["hypercube-stoch(2, 0.3, 0.1)"]
///
/// [verification]                         # optional
/// invariants = true
/// dump_losses = false
/// ```
///
/// Instances may also be given inline as `[[inline]]` tables holding
/// `name`, `action_set` and `environment`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub horizons: Vec<u64>,
    #[serde(default = "default_modes")]
    pub modes: Vec<Mode>,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub instances: Vec<String>,
    #[serde(default)]
    pub inline: Vec<InstanceDocument>,
    #[serde(default)]
    pub verification: VerificationToggles,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let config: ExperimentConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.seeds.is_empty() {
            return bad("`seeds` must list at least one seed");
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return bad("`horizons` must list positive horizons");
        }
        if self.horizons.windows(2).any(|w| w[0] >= w[1]) {
            return bad("`horizons` must be strictly ascending");
        }
        if self.modes.is_empty() {
            return bad("`modes` must not be empty");
        }
        if self.instances.is_empty() && self.inline.is_empty() {
            return bad("no instances: set `instances` or add `[[inline]]` tables");
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0 && eta < 0.25) {
                return bad("`eta` must lie in (0, 1/4)");
            }
        }
        Ok(())
    }

    /// Applies CLI overrides and the output-root variable.
    pub fn with_overrides(mut self, overrides: &RunOverrides) -> Result<Self, HarnessError> {
        if let Some(seed) = overrides.seed {
            self.seeds = vec![seed];
        }
        if let Some(h) = overrides.horizon {
            self.horizons = vec![h];
        }
        if let Some(root) = &overrides.output_root {
            self.output_dir = relocate(root, &self.output_dir);
        }
        self.validate()?;
        Ok(self)
    }

    /// Resolves catalog names and inline documents, in config order.
    pub fn resolve_instances(&self) -> Result<Vec<NamedInstance>, HarnessError> {
        let mut out = Vec::new();
        for name in &self.instances {
            let (set, spec) = instance_catalog(name)?;
            out.push(NamedInstance { name: name.clone(), set, spec });
        }
        for doc in &self.inline {
            doc.environment.validate(&doc.action_set)?;
            out.push(NamedInstance { name: doc.name.clone(), set: doc.action_set.clone(), spec: doc.environment.clone() });
        }
        Ok(out)
    }
}

fn relocate(root: &Path, dir: &Path) -> PathBuf {
    if dir.is_absolute() {
        root.join(dir.file_name().unwrap_or_default())
    } else {
        root.join(dir)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    pub horizon: Option<u64>,
    pub output_root: Option<PathBuf>,
}

impl RunOverrides {
    /// Picks up the output root from [`OUTPUT_ROOT_VAR`] when set.
    pub fn from_env() -> Self {
        RunOverrides {
            output_root: std::env::var_os(OUTPUT_ROOT_VAR).filter(|v| !v.is_empty()).map(PathBuf::from),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedInstance {
    pub name: String,
    pub set: PolytopeActionSet,
    pub spec: EnvironmentSpec,
}

/// File-name-safe version of an instance name.
pub fn slug(name: &str) -> String {
    let mut out = String::new();
    for c in name.chars() {
        if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
            out.push(c);
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

pub fn cell_id(instance: &str, mode: Mode, horizon: u64, seed: u64) -> String {
    format!("{}__{}__T{}__s{}", slug(instance), mode.name(), horizon, seed)
}

/// Rounds at which regret is sampled: `T/8, T/4, T/2, T` (at least round 1).
pub fn checkpoints(horizon: u64) -> Vec<u64> {
    CHECKPOINT_FRACTIONS.iter().map(|(n, d)| (horizon * n / d).max(1)).collect()
}

/// Result of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub instance: String,
    pub mode: Mode,
    pub horizon: u64,
    pub seed: u64,
    pub rounds: u64,
    pub final_regret: f64,
    pub final_expected_regret: f64,
    pub final_clean_regret: f64,
    /// `(round, cumulative regret)` at [`checkpoints`].
    pub checkpoints: Vec<(u64, f64)>,
    pub sum_ratio: f64,
    pub sum_gap: f64,
    pub corruption: f64,
    pub clamp_rate: f64,
    pub max_decrement: f64,
    pub violations: u64,
    pub first_violation: Option<String>,
    pub failure: Option<String>,
}

/// Per-round hook: the learner's record, what the environment disclosed and the ledger step.
pub type RoundObserver<'a> = dyn FnMut(&RoundRecord, &Disclosure, &LedgerEntry) + 'a;

/// Runs one cell to completion (or to its first aborted round).
pub fn run_cell_with(
    instance: &str,
    set: &PolytopeActionSet,
    spec: &EnvironmentSpec,
    config: &LearnerConfig,
    check_invariants: bool,
    observer: Option<&mut RoundObserver<'_>>,
) -> CellResult {
    let mut result = CellResult {
        instance: instance.to_string(),
        mode: config.mode,
        horizon: config.horizon,
        seed: config.seed,
        rounds: 0,
        final_regret: f64::NAN,
        final_expected_regret: f64::NAN,
        final_clean_regret: f64::NAN,
        checkpoints: Vec::new(),
        sum_ratio: 0.0,
        sum_gap: 0.0,
        corruption: 0.0,
        clamp_rate: 0.0,
        max_decrement: 0.0,
        violations: 0,
        first_violation: None,
        failure: None,
    };
    let setup = Environment::new(spec.clone(), set)
        .map_err(|e| e.to_string())
        .and_then(|env| Ok((env, RegretLedger::new(set, spec).map_err(|e| e.to_string())?)))
        .and_then(|(env, ledger)| Ok((env, ledger, Learner::new(set.clone(), config.clone()).map_err(|e| e.to_string())?)));
    let (mut env, mut ledger, mut learner) = match setup {
        Ok(x) => x,
        Err(e) => {
            result.failure = Some(e);
            return result;
        }
    };
    let marks = checkpoints(config.horizon);
    let mut observer = observer;
    while !learner.is_finished() {
        let previous_sum = learner.state().stability_sum;
        let record = match learner.step(&mut env) {
            Ok(r) => r,
            Err(e) => {
                result.failure = Some(e.to_string());
                break;
            }
        };
        let disclosure = env.last_disclosure().expect("a round was played").clone();
        let entry = ledger.update(
            &disclosure.loss_vector,
            record.action,
            &record.point,
            record.ratio,
            disclosure.corruption_norm,
        );
        result.max_decrement = result.max_decrement.max(record.decrement);
        if check_invariants {
            let found = check_round_invariants(&record, previous_sum, set, learner.barrier());
            if let Some(v) = found.first() {
                result.violations += 1;
                result
                    .first_violation
                    .get_or_insert_with(|| format!("round {}: {} {}", v.round, v.invariant, v.detail));
            }
        }
        if marks.contains(&record.round) {
            result.checkpoints.push((record.round, entry.cumulative));
        }
        if let Some(obs) = observer.as_deref_mut() {
            obs(&record, &disclosure, &entry);
        }
    }
    result.rounds = ledger.rounds();
    result.final_regret = ledger.cumulative();
    result.final_expected_regret = ledger.cumulative_expected();
    result.final_clean_regret = ledger.cumulative_clean();
    result.sum_ratio = ledger.sum_ratio;
    result.sum_gap = ledger.sum_gap_of_point;
    result.corruption = ledger.corruption_used;
    result.clamp_rate = env.clamp_rate();
    result
}

fn fmt_f(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.16e}")
    }
}

/// Trace header row for dimension `d`.
pub fn trace_columns(d: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string(), "beta".to_string()];
    cols.extend((1..=d).map(|i| format!("x_{i}")));
    cols.extend(
        [
            "z_index",
            "r",
            "b",
            "i",
            "eps",
            "a_index",
            "loss",
            "g",
            "cum_regret",
            "delta_x",
            "corruption",
            "cum_regret_clean",
            "cum_regret_expected",
        ]
        .map(String::from),
    );
    cols
}

fn trace_row(record: &RoundRecord, disclosure: &Disclosure, entry: &LedgerEntry) -> Vec<String> {
    let mut row = vec![record.round.to_string(), fmt_f(record.beta)];
    row.extend(record.point.iter().map(|v| fmt_f(*v)));
    row.push(record.reference.map(|z| z.to_string()).unwrap_or_default());
    row.push(fmt_f(record.ratio));
    row.push(u8::from(record.explore).to_string());
    match record.direction {
        Some((i, e)) => {
            row.push(i.to_string());
            row.push(e.to_string());
        }
        None => {
            row.push(String::new());
            row.push(String::new());
        }
    }
    row.push(record.action.to_string());
    row.push(fmt_f(record.observed));
    row.push(fmt_f(record.stability));
    row.push(fmt_f(entry.cumulative));
    row.push(fmt_f(entry.gap_of_point));
    row.push(fmt_f(disclosure.corruption_norm));
    row.push(fmt_f(entry.cumulative_clean));
    row.push(fmt_f(entry.cumulative_expected));
    row
}

/// Runs a cell and streams its trace (and optionally its disclosed losses) as CSV.
pub fn run_cell(
    instance: &str,
    set: &PolytopeActionSet,
    spec: &EnvironmentSpec,
    config: &LearnerConfig,
    check_invariants: bool,
    trace: &mut dyn Write,
    losses: Option<&mut dyn Write>,
) -> Result<CellResult, HarnessError> {
    writeln!(trace, "{TRACE_HEADER}").map_err(io_err(Path::new("<trace>")))?;
    let mut writer = csv::Writer::from_writer(trace);
    writer.write_record(trace_columns(set.dimension()))?;
    let mut disclosures = Vec::new();
    let keep = losses.is_some();
    let mut csv_error = None;
    let result = {
        let mut obs = |r: &RoundRecord, d: &Disclosure, e: &LedgerEntry| {
            if csv_error.is_none() {
                if let Err(err) = writer.write_record(trace_row(r, d, e)) {
                    csv_error = Some(err);
                }
            }
            if keep {
                disclosures.push(d.clone());
            }
        };
        run_cell_with(instance, set, spec, config, check_invariants, Some(&mut obs))
    };
    if let Some(e) = csv_error {
        return Err(e.into());
    }
    writer.flush().map_err(io_err(Path::new("<trace>")))?;
    if let Some(out) = losses {
        crate::environments::write_disclosures_csv(out, &disclosures)?;
    }
    Ok(result)
}

/// What a trace file alone determines about its cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceDigest {
    pub rounds: u64,
    pub final_regret: f64,
    pub checkpoints: Vec<(u64, f64)>,
    pub sum_ratio: f64,
    pub sum_gap: f64,
    pub corruption: f64,
}

/// Recomputes a cell's summary numbers from its trace CSV.
pub fn digest_trace<R: io::Read>(reader: R, horizon: u64) -> Result<TraceDigest, HarnessError> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| HarnessError::Format {
            path: PathBuf::from("<trace>"),
            message: format!("missing column `{name}`"),
        })
    };
    let (t_col, r_col, regret_col, gap_col, corr_col) =
        (col("t")?, col("r")?, col("cum_regret")?, col("delta_x")?, col("corruption")?);
    let parse = |s: &str| -> f64 {
        if s.is_empty() {
            f64::NAN
        } else {
            s.parse().unwrap_or(f64::NAN)
        }
    };
    let marks = checkpoints(horizon);
    let mut digest = TraceDigest {
        rounds: 0,
        final_regret: f64::NAN,
        checkpoints: Vec::new(),
        sum_ratio: 0.0,
        sum_gap: 0.0,
        corruption: 0.0,
    };
    for row in rdr.records() {
        let row = row?;
        let t: u64 = row[t_col].parse().map_err(|_| HarnessError::Format {
            path: PathBuf::from("<trace>"),
            message: format!("bad round `{}`", &row[t_col]),
        })?;
        let regret = parse(&row[regret_col]);
        digest.rounds = t;
        digest.final_regret = regret;
        digest.sum_ratio += parse(&row[r_col]);
        digest.sum_gap += parse(&row[gap_col]);
        digest.corruption += parse(&row[corr_col]);
        if marks.contains(&t) {
            digest.checkpoints.push((t, regret));
        }
    }
    Ok(digest)
}

/// Least-squares slope of `log R` against `log t` over the positive points.
pub fn growth_exponent(points: &[(u64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> =
        points.iter().filter(|(t, r)| *t > 0 && *r > 0.0).map(|(t, r)| ((*t as f64).ln(), r.ln())).collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        f64::NAN
    } else {
        sxy / sxx
    }
}

/// Aggregate of all seeds of one `(instance, mode, horizon)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub cell: String,
    pub instance: String,
    pub mode: Mode,
    pub horizon: u64,
    pub seeds: u64,
    pub failures: u64,
    pub violations: u64,
    pub mean_regret: f64,
    /// Absent with fewer than two successful seeds.
    pub stderr_regret: Option<f64>,
    pub regret_t8: f64,
    pub regret_t4: f64,
    pub regret_t2: f64,
    pub regret_t: f64,
    /// `R(T) / R(T/4)`.
    pub growth_ratio: f64,
    pub growth_exponent: f64,
    pub mean_expected_regret: f64,
    pub mean_clean_regret: f64,
    pub sum_ratio: f64,
    pub sum_gap: f64,
    pub corruption: f64,
    pub clamp_rate: f64,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn stderr(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    Some((var / xs.len() as f64).sqrt())
}

/// Folds the seeds of one cell group. `results` must share instance, mode and horizon.
pub fn summarize(results: &[CellResult]) -> SummaryRow {
    let first = &results[0];
    let ok: Vec<&CellResult> = results.iter().filter(|r| r.failure.is_none()).collect();
    let pick = |f: &dyn Fn(&CellResult) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<f64>>();
    let finals = pick(&|r| r.final_regret);
    let marks = checkpoints(first.horizon);
    let mean_at: Vec<(u64, f64)> = marks
        .iter()
        .enumerate()
        .map(|(k, t)| (*t, mean(&pick(&|r| r.checkpoints.get(k).map_or(f64::NAN, |c| c.1)))))
        .collect();
    SummaryRow {
        cell: format!("{}__{}__T{}", slug(&first.instance), first.mode.name(), first.horizon),
        instance: first.instance.clone(),
        mode: first.mode,
        horizon: first.horizon,
        seeds: results.len() as u64,
        failures: (results.len() - ok.len()) as u64,
        violations: results.iter().map(|r| r.violations).sum(),
        mean_regret: mean(&finals),
        stderr_regret: stderr(&finals),
        regret_t8: mean_at[0].1,
        regret_t4: mean_at[1].1,
        regret_t2: mean_at[2].1,
        regret_t: mean_at[3].1,
        growth_ratio: mean_at[3].1 / mean_at[1].1,
        growth_exponent: growth_exponent(&mean_at),
        mean_expected_regret: mean(&pick(&|r| r.final_expected_regret)),
        mean_clean_regret: mean(&pick(&|r| r.final_clean_regret)),
        sum_ratio: mean(&pick(&|r| r.sum_ratio)),
        sum_gap: mean(&pick(&|r| r.sum_gap)),
        corruption: mean(&pick(&|r| r.corruption)),
        clamp_rate: mean(&pick(&|r| r.clamp_rate)),
    }
}

const SUMMARY_COLUMNS: [&str; 21] = [
    "cell",
    "instance",
    "mode",
    "horizon",
    "seeds",
    "failures",
    "violations",
    "mean_regret",
    "stderr_regret",
    "regret_t8",
    "regret_t4",
    "regret_t2",
    "regret_t",
    "growth_ratio",
    "growth_exponent",
    "mean_expected_regret",
    "mean_clean_regret",
    "sum_ratio",
    "sum_gap",
    "corruption",
    "clamp_rate",
];

pub fn write_summary<W: Write>(mut out: W, rows: &[SummaryRow]) -> Result<(), HarnessError> {
    writeln!(out, "{SUMMARY_HEADER}").map_err(io_err(Path::new("<summary>")))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.cell.clone(),
            r.instance.clone(),
            r.mode.name().to_string(),
            r.horizon.to_string(),
            r.seeds.to_string(),
            r.failures.to_string(),
            r.violations.to_string(),
            fmt_f(r.mean_regret),
            r.stderr_regret.map(fmt_f).unwrap_or_default(),
            fmt_f(r.regret_t8),
            fmt_f(r.regret_t4),
            fmt_f(r.regret_t2),
            fmt_f(r.regret_t),
            fmt_f(r.growth_ratio),
            fmt_f(r.growth_exponent),
            fmt_f(r.mean_expected_regret),
            fmt_f(r.mean_clean_regret),
            fmt_f(r.sum_ratio),
            fmt_f(r.sum_gap),
            fmt_f(r.corruption),
            fmt_f(r.clamp_rate),
        ])?;
    }
    w.flush().map_err(io_err(Path::new("<summary>")))?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>, HarnessError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
    let fmt = |message: String| HarnessError::Format { path: path.to_path_buf(), message };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != SUMMARY_COLUMNS.len() {
            return Err(fmt(format!("expected {} columns, got {}", SUMMARY_COLUMNS.len(), rec.len())));
        }
        let f = |i: usize| -> f64 { rec[i].parse().unwrap_or(f64::NAN) };
        let u = |i: usize| -> Result<u64, HarnessError> {
            rec[i].parse().map_err(|_| fmt(format!("bad integer `{}` in `{}`", &rec[i], SUMMARY_COLUMNS[i])))
        };
        rows.push(SummaryRow {
            cell: rec[0].to_string(),
            instance: rec[1].to_string(),
            mode: rec[2].parse().map_err(fmt)?,
            horizon: u(3)?,
            seeds: u(4)?,
            failures: u(5)?,
            violations: u(6)?,
            mean_regret: f(7),
            stderr_regret: if rec[8].is_empty() { None } else { Some(f(8)) },
            regret_t8: f(9),
            regret_t4: f(10),
            regret_t2: f(11),
            regret_t: f(12),
            growth_ratio: f(13),
            growth_exponent: f(14),
            mean_expected_regret: f(15),
            mean_clean_regret: f(16),
            sum_ratio: f(17),
            sum_gap: f(18),
            corruption: f(19),
            clamp_rate: f(20),
        });
    }
    Ok(rows)
}

/// Files written by [`run`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub summary_path: PathBuf,
    pub trace_paths: Vec<PathBuf>,
    pub rows: Vec<SummaryRow>,
    pub results: Vec<CellResult>,
}

impl RunOutcome {
    pub fn failures(&self) -> u64 {
        self.rows.iter().map(|r| r.failures).sum()
    }
}

/// Runs every cell of `config` in parallel, writing `traces/<cell>.csv`
/// and `summary.csv` under the output directory.
pub fn run(config: &ExperimentConfig) -> Result<RunOutcome, HarnessError> {
    config.validate()?;
    let instances = config.resolve_instances()?;
    let out = config.output_dir.clone();
    let traces = out.join("traces");
    fs::create_dir_all(&traces).map_err(io_err(&traces))?;

    struct Job<'a> {
        instance: &'a NamedInstance,
        mode: Mode,
        horizon: u64,
        seed: u64,
    }
    let mut jobs = Vec::new();
    for instance in &instances {
        for &mode in &config.modes {
            for &horizon in &config.horizons {
                for &seed in &config.seeds {
                    jobs.push(Job { instance, mode, horizon, seed });
                }
            }
        }
    }
    let finished: Vec<Result<(CellResult, PathBuf), HarnessError>> = jobs
        .par_iter()
        .map(|job| {
            let mut cfg = LearnerConfig::new(job.horizon, job.mode, job.seed);
            if let Some(eta) = config.eta {
                cfg.eta = eta;
            }
            let id = cell_id(&job.instance.name, job.mode, job.horizon, job.seed);
            let path = traces.join(format!("{id}.csv"));
            let file = fs::File::create(&path).map_err(io_err(&path))?;
            let mut trace = BufWriter::new(file);
            let result = if config.verification.dump_losses {
                let lpath = traces.join(format!("{id}.losses.csv"));
                let mut lfile = BufWriter::new(fs::File::create(&lpath).map_err(io_err(&lpath))?);
                run_cell(
                    &job.instance.name,
                    &job.instance.set,
                    &job.instance.spec,
                    &cfg,
                    config.verification.invariants,
                    &mut trace,
                    Some(&mut lfile),
                )?
            } else {
                run_cell(
                    &job.instance.name,
                    &job.instance.set,
                    &job.instance.spec,
                    &cfg,
                    config.verification.invariants,
                    &mut trace,
                    None,
                )?
            };
            trace.flush().map_err(io_err(&path))?;
            Ok((result, path))
        })
        .collect();

    let mut results = Vec::new();
    let mut trace_paths = Vec::new();
    for f in finished {
        let (r, p) = f?;
        results.push(r);
        trace_paths.push(p);
    }
    let mut rows = Vec::new();
    for group in results.chunk_by(|a, b| a.instance == b.instance && a.mode == b.mode && a.horizon == b.horizon) {
        rows.push(summarize(group));
    }
    let summary_path = out.join("summary.csv");
    let file = fs::File::create(&summary_path).map_err(io_err(&summary_path))?;
    write_summary(BufWriter::new(file), &rows)?;
    Ok(RunOutcome { output_dir: out, summary_path, trace_paths, rows, results })
}

/// One line of a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub instance: String,
    pub horizon: u64,
    pub mode: Mode,
    pub source: String,
    pub mean_regret: f64,
    /// Regret over the reference row's regret (the group's first baseline row, else its first row).
    pub ratio: f64,
    pub growth_exponent: f64,
    pub reference_exponent: f64,
}

/// Joins summary files by `(instance, horizon)` and relates every row to a reference row.
pub fn compare(files: &[PathBuf]) -> Result<Vec<ComparisonRow>, HarnessError> {
    let mut groups: BTreeMap<(String, u64), Vec<(String, SummaryRow)>> = BTreeMap::new();
    for path in files {
        for row in read_summary(path)? {
            groups.entry((row.instance.clone(), row.horizon)).or_default().push((path.display().to_string(), row));
        }
    }
    let mut out = Vec::new();
    for ((instance, horizon), rows) in groups {
        let reference = rows.iter().find(|(_, r)| r.mode == Mode::Baseline).unwrap_or(&rows[0]).1.clone();
        for (source, row) in rows {
            out.push(ComparisonRow {
                instance: instance.clone(),
                horizon,
                mode: row.mode,
                source,
                mean_regret: row.mean_regret,
                ratio: row.mean_regret / reference.mean_regret,
                growth_exponent: row.growth_exponent,
                reference_exponent: reference.growth_exponent,
            });
        }
    }
    Ok(out)
}

pub fn render_comparison(rows: &[ComparisonRow]) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    let _ = writeln!(s, "{:<40} {:>8} {:<10} {:>12} {:>8} {:>8}", "instance", "T", "mode", "regret", "ratio", "exp.");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<40} {:>8} {:<10} {:>12.4} {:>8.4} {:>8.4}",
            r.instance,
            r.horizon,
            r.mode.name(),
            r.mean_regret,
            r.ratio,
            r.growth_exponent
        );
    }
    s
}

// ---- verification -----------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Gauge,
    Boundpsi,
    Dikin,
    Hessian,
    Boundgamma,
    Stability,
    Tracking,
    Unbiasedness,
    Invariants,
}

impl Suite {
    pub const ALL: [Suite; 9] = [
        Suite::Gauge,
        Suite::Boundpsi,
        Suite::Dikin,
        Suite::Hessian,
        Suite::Boundgamma,
        Suite::Stability,
        Suite::Tracking,
        Suite::Unbiasedness,
        Suite::Invariants,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Gauge => "gauge",
            Suite::Boundpsi => "boundpsi",
            Suite::Dikin => "dikin",
            Suite::Hessian => "hessian",
            Suite::Boundgamma => "boundgamma",
            Suite::Stability => "stability",
            Suite::Tracking => "tracking",
            Suite::Unbiasedness => "unbiasedness",
            Suite::Invariants => "invariants",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("unknown suite `{s}` (known: {})", Suite::ALL.map(Suite::name).join(", ")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub suites: Vec<Suite>,
    pub seed: u64,
    /// Applied to every learner the suites build.
    pub faults: FaultInjection,
    /// Trace count and horizon for the tracking suite.
    pub tracking_traces: u64,
    pub tracking_horizon: u64,
    pub unbiasedness_samples: u64,
    pub invariant_horizon: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            suites: Suite::ALL.to_vec(),
            seed: 0,
            faults: FaultInjection::default(),
            tracking_traces: 50,
            tracking_horizon: 2000,
            unbiasedness_samples: 200_000,
            invariant_horizon: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOutcome {
    pub reports: Vec<LemmaReport>,
    pub warning: Option<String>,
}

impl VerifyOutcome {
    pub fn passed(&self) -> bool {
        self.reports.iter().all(|r| r.passed)
    }
}

/// Catalog instances exercised by the tracking and invariant suites.
pub const VERIFY_INSTANCES: [&str; 4] =
    ["hypercube-stoch(2, 0.3, 0.1)", "square-adversarial-alternating", "square-corrupted(50)", "simplex-stoch(3)"];

/// Records the tracking-bound inputs of one learner run.
pub fn record_tracking_trace(
    set: &PolytopeActionSet,
    spec: &EnvironmentSpec,
    config: &LearnerConfig,
) -> Result<Vec<TrackingRound>, String> {
    let mut trace = Vec::with_capacity(config.horizon as usize);
    let mut obs = |r: &RoundRecord, d: &Disclosure, _: &LedgerEntry| {
        trace.push(TrackingRound {
            action: r.action_vector.clone(),
            observed: r.observed,
            explore: r.explore,
            loss: d.loss_vector.clone(),
            predictor: Some(r.predictor.clone()),
        });
    };
    let result = run_cell_with("trace", set, spec, config, false, Some(&mut obs));
    match result.failure {
        Some(e) => Err(e),
        None => Ok(trace),
    }
}

fn merge(name: &str, reports: Vec<LemmaReport>) -> LemmaReport {
    let trials = reports.iter().map(|r| r.trials).sum();
    let tolerance = reports.first().map_or(0.0, |r| r.tolerance);
    let worst = reports.iter().max_by(|a, b| a.max_violation.total_cmp(&b.max_violation));
    let violation = worst.map_or(0.0, |r| r.max_violation);
    let note = worst.map(|r| r.note.clone()).unwrap_or_default();
    LemmaReport::new(name, trials, violation, tolerance).with_note(note)
}

/// Runs the selected suites. Every suite draws from its own stream derived from `seed`.
pub fn verify(options: &VerifyOptions) -> VerifyOutcome {
    if options.suites.is_empty() {
        return VerifyOutcome { reports: Vec::new(), warning: Some("no verification suite selected".into()) };
    }
    let mut reports = Vec::new();
    let square = builtin_instance("hypercube", 2).expect("builtin");
    for (k, &suite) in options.suites.iter().enumerate() {
        let mut rng = run_rng(options.seed.wrapping_mul(1000).wrapping_add(k as u64));
        match suite {
            Suite::Gauge => {
                let mut r = oracles::verify_gauge_bisection(&square, 1000, &mut rng);
                r.lemma = "gauge-bisection(square)".into();
                reports.push(r);
                let random: Vec<LemmaReport> = (0..20)
                    .map(|i| {
                        let set = oracles::random_polytope(2 + i % 3, &mut rng);
                        oracles::verify_gauge_bisection(&set, 50, &mut rng)
                    })
                    .collect();
                reports.push(merge("gauge-bisection(random)", random));
            }
            Suite::Boundpsi => {
                let all = (0..20)
                    .map(|i| {
                        let set = oracles::random_polytope(2 + i % 3, &mut rng);
                        oracles::verify_boundpsi(&set, 50, &mut rng)
                    })
                    .collect();
                reports.push(merge("boundpsi", all));
            }
            Suite::Dikin => {
                let all = (0..20)
                    .map(|i| {
                        let set = oracles::random_polytope(1 + i % 4, &mut rng);
                        oracles::verify_dikin_containment(&set, 5, &mut rng)
                    })
                    .collect();
                reports.push(merge("dikin-containment", all));
            }
            Suite::Hessian => {
                let all = (0..20)
                    .map(|i| {
                        let set = oracles::random_polytope(2 + i % 3, &mut rng);
                        oracles::verify_hessian_monotonicity(&set, 25, &mut rng)
                    })
                    .collect();
                reports.push(merge("hessian-monotonicity", all));
            }
            Suite::Boundgamma => {
                let (set, spec) = instance_catalog("hypercube-stoch(2, 0.3, 0.1)").expect("catalog");
                let l = nalgebra::DVector::from_column_slice(spec.true_loss.as_ref().expect("stochastic"));
                reports.push(oracles::verify_boundgamma(&set, &l, 200, &mut rng));
            }
            Suite::Stability => {
                let all = (0..20)
                    .map(|i| {
                        let set = oracles::random_polytope(2 + i % 3, &mut rng);
                        oracles::verify_stability_lemma(&set, 25, &mut rng)
                    })
                    .collect();
                reports.push(merge("boundstability", all));
            }
            Suite::Tracking => reports.extend(tracking_suite(options)),
            Suite::Unbiasedness => {
                for mode in [Mode::ScaledUp, Mode::Baseline] {
                    let mut fixture = UnbiasednessFixture::hypercube(mode);
                    fixture.estimator_scale = 2.0 + options.faults.estimator_scale_offset;
                    for mut r in oracles::verify_unbiasedness(&fixture, options.unbiasedness_samples, &mut rng) {
                        r.lemma = format!("{}({})", r.lemma, mode.name());
                        reports.push(r);
                    }
                }
            }
            Suite::Invariants => reports.extend(invariant_suite(options)),
        }
    }
    VerifyOutcome { reports, warning: None }
}

fn tracking_suite(options: &VerifyOptions) -> Vec<LemmaReport> {
    let per_trace: Vec<Vec<LemmaReport>> = (0..options.tracking_traces)
        .into_par_iter()
        .map(|k| {
            let name = VERIFY_INSTANCES[(k as usize) % VERIFY_INSTANCES.len()];
            let (set, spec) = instance_catalog(name).expect("catalog");
            let mode = if (k / VERIFY_INSTANCES.len() as u64) % 2 == 0 { Mode::ScaledUp } else { Mode::Baseline };
            let mut cfg = LearnerConfig::new(options.tracking_horizon, mode, options.seed.wrapping_add(k));
            cfg.faults = options.faults;
            let trace = match record_tracking_trace(&set, &spec, &cfg) {
                Ok(t) => t,
                Err(e) => {
                    return vec![LemmaReport::new("tracking", 0, f64::INFINITY, 1e-8).with_note(e)];
                }
            };
            [ComparatorPath::Mean, ComparatorPath::Path, ComparatorPath::Zero]
                .iter()
                .map(|c| {
                    let u = c.sequence(&trace, set.dimension());
                    let mut r = oracles::verify_tracking_bound(&trace, &u, cfg.eta);
                    r.lemma = format!("tracking({})", c.name());
                    r
                })
                .collect()
        })
        .collect();
    ["mean", "path", "zero"]
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let reports: Vec<LemmaReport> =
                per_trace.iter().map(|v| v.get(j).cloned().unwrap_or_else(|| v[0].clone())).collect();
            merge(&format!("tracking({c})"), reports)
        })
        .collect()
}

fn invariant_suite(options: &VerifyOptions) -> Vec<LemmaReport> {
    let mut cases: Vec<(String, PolytopeActionSet, EnvironmentSpec)> = VERIFY_INSTANCES
        .iter()
        .map(|n| {
            let (s, e) = instance_catalog(n).expect("catalog");
            (n.to_string(), s, e)
        })
        .collect();
    let (s, e) = oracles::high_loss_instance();
    cases.push(("high-loss-simplex".into(), s, e));
    let jobs: Vec<(usize, Mode)> =
        (0..cases.len()).flat_map(|i| [Mode::ScaledUp, Mode::Baseline].map(|m| (i, m))).collect();
    jobs.par_iter()
        .map(|&(i, mode)| {
            let (name, set, spec) = &cases[i];
            let mut cfg = LearnerConfig::new(options.invariant_horizon, mode, options.seed.wrapping_add(i as u64));
            cfg.faults = options.faults;
            let mut r = oracles::verify_invariant_sweep(set, spec, &cfg);
            r.lemma = format!("invariants({name}, {})", mode.name());
            r
        })
        .collect()
}

/// Reads a list of suites such as `gauge,tracking`.
pub fn parse_suites(items: &[String]) -> Result<Vec<Suite>, String> {
    let mut out = Vec::new();
    for item in items {
        for part in item.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            if part == "all" {
                out.extend(Suite::ALL);
            } else {
                out.push(part.parse()?);
            }
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

/// Reads the first line of a file, used to check format headers.
pub fn first_line(path: &Path) -> Result<String, HarnessError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut line = String::new();
    io::BufReader::new(file).read_line(&mut line).map_err(io_err(path))?;
    Ok(line.trim_end().to_string())
}
