//! Loss generation for the stochastic, adversarial and corrupted-stochastic
//! regimes, and regret accounting.
//!
//! The learner only ever sees the scalar `f_t(a_t)`. The loss vector `l_t`
//! behind it is kept in a [`Disclosure`] for the ledger and for offline checks.

use std::io::Write;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{builtin_instance, GeometryError, PolytopeActionSet};
use crate::learner::{Feedback, RoundContext, RunRng};

/// Observed-loss clamp rate above which a run is flagged.
pub const CLAMP_WARN_RATE: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvironmentError {
    #[error("invalid environment: {0}")]
    Invalid(String),
    #[error("corruption budget {budget} exceeded (would reach {would_reach})")]
    BudgetExceeded { budget: f64, would_reach: f64 },
    #[error("loss vector norm {0} exceeds 1")]
    LossNormExceeded(f64),
    #[error("no unique optimal vertex (gap {0:e})")]
    NoUniqueOptimum(f64),
    #[error("unknown instance `{0}`")]
    UnknownInstance(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Stochastic,
    Adversarial,
    Corrupted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseFamily {
    /// Uniform on `[-1, 1]`.
    #[default]
    Uniform,
    /// Normal with standard deviation 1/2, truncated to `[-1, 1]`.
    TruncatedGaussian,
}

/// `eps_t = offset + scale * Z`, `Z` drawn from `family`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct NoiseSpec {
    #[serde(default)]
    pub family: NoiseFamily,
    #[serde(default)]
    pub scale: f64,
    #[serde(default)]
    pub offset: f64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec::default()
    }

    /// Draws nothing from `rng` when the scale is zero.
    fn sample(&self, rng: &mut RunRng) -> f64 {
        if self.scale == 0.0 {
            return self.offset;
        }
        let z = match self.family {
            NoiseFamily::Uniform => rng.random_range(-1.0..=1.0),
            NoiseFamily::TruncatedGaussian => loop {
                let z: f64 = rng.sample::<f64, _>(StandardNormal) * 0.5;
                if z.abs() <= 1.0 {
                    break z;
                }
            },
        };
        self.offset + self.scale * z
    }
}

/// Loss rules for the adversarial regime. Every rule sees only the round
/// index and the actions played in earlier rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum AdversaryRule {
    /// `l_t = base + amplitude * (-1)^(t+1) e_coordinate`.
    Alternating { coordinate: usize, amplitude: f64, base: Vec<f64> },
    /// Cycles through `losses`, switching every `period` rounds.
    Switching { period: u64, losses: Vec<Vec<f64>> },
    /// Penalizes the running mean of past actions:
    /// `l_t = amplitude * mean(a_1..a_{t-1}) / ||mean||` (zero on round 1).
    ChaseHistory { amplitude: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "kebab-case")]
pub enum CorruptionSchedule {
    /// Corrupts every round from the first until the budget runs out.
    FrontLoaded,
    /// Spreads the corrupted rounds evenly over the horizon.
    Uniform,
    /// Corrupts only rounds whose decision point is near the optimum,
    /// i.e. `Delta(x_t) <= radius * Delta_min`.
    Targeted { radius: f64 },
    /// Replays explicit corruption vectors `c_1, c_2, ...` (zero afterwards).
    /// Unlike the generated schedules this one is not truncated: exceeding the
    /// budget is an error.
    Explicit { vectors: Vec<Vec<f64>> },
}

/// Corruption `c_t = l_t - l*` with `sum ||c_t|| <= budget`.
///
/// Generated schedules use `c_t = -strength * l*`, truncated to the remaining budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub budget: f64,
    pub schedule: CorruptionSchedule,
    #[serde(default = "default_strength")]
    pub strength: f64,
}

fn default_strength() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub regime: Regime,
    #[serde(default)]
    pub true_loss: Option<Vec<f64>>,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub adversary: Option<AdversaryRule>,
    #[serde(default)]
    pub corruption: Option<CorruptionSpec>,
}

impl EnvironmentSpec {
    pub fn stochastic(true_loss: Vec<f64>, noise: NoiseSpec) -> Self {
        EnvironmentSpec { regime: Regime::Stochastic, true_loss: Some(true_loss), noise, adversary: None, corruption: None }
    }

    pub fn adversarial(rule: AdversaryRule, noise: NoiseSpec) -> Self {
        EnvironmentSpec { regime: Regime::Adversarial, true_loss: None, noise, adversary: Some(rule), corruption: None }
    }

    pub fn corrupted(true_loss: Vec<f64>, noise: NoiseSpec, corruption: CorruptionSpec) -> Self {
        EnvironmentSpec {
            regime: Regime::Corrupted,
            true_loss: Some(true_loss),
            noise,
            adversary: None,
            corruption: Some(corruption),
        }
    }

    pub fn validate(&self, set: &PolytopeActionSet) -> Result<(), EnvironmentError> {
        let d = set.dimension();
        let bad = |msg: String| Err(EnvironmentError::Invalid(msg));
        if set.max_vertex_norm() > 1.0 + 1e-12 {
            return bad("action set vertices must lie in the unit ball".into());
        }
        if !(self.noise.scale >= 0.0) || !self.noise.offset.is_finite() {
            return bad("noise scale must be >= 0 and offset finite".into());
        }
        match self.regime {
            Regime::Stochastic | Regime::Corrupted => {
                let Some(l) = &self.true_loss else {
                    return bad("stochastic regimes need true_loss".into());
                };
                if l.len() != d {
                    return bad(format!("true_loss has length {}, action set dimension {d}", l.len()));
                }
                let norm = DVector::from_column_slice(l).norm();
                if norm > 1.0 + 1e-12 {
                    return Err(EnvironmentError::LossNormExceeded(norm));
                }
                if self.adversary.is_some() {
                    return bad("stochastic regimes take no adversary rule".into());
                }
                match (&self.corruption, self.regime) {
                    (Some(_), Regime::Stochastic) => return bad("stochastic regime takes no corruption".into()),
                    (None, Regime::Corrupted) => return bad("corrupted regime needs a corruption spec".into()),
                    (Some(c), _) => {
                        if !(c.budget >= 0.0) || !(c.strength >= 0.0) {
                            return bad("corruption budget and strength must be >= 0".into());
                        }
                        if let CorruptionSchedule::Explicit { vectors } = &c.schedule {
                            if vectors.iter().any(|v| v.len() != d) {
                                return bad("explicit corruption vectors must match the dimension".into());
                            }
                        }
                    }
                    _ => {}
                }
            }
            Regime::Adversarial => {
                let Some(rule) = &self.adversary else {
                    return bad("adversarial regime needs an adversary rule".into());
                };
                match rule {
                    AdversaryRule::Alternating { coordinate, base, .. } => {
                        if *coordinate >= d || base.len() != d {
                            return bad("alternating rule does not match the dimension".into());
                        }
                    }
                    AdversaryRule::Switching { period, losses } => {
                        if *period == 0 || losses.is_empty() || losses.iter().any(|l| l.len() != d) {
                            return bad("switching rule needs a positive period and d-dimensional losses".into());
                        }
                    }
                    AdversaryRule::ChaseHistory { amplitude } => {
                        if amplitude.abs() > 1.0 {
                            return bad("chase-history amplitude must be at most 1".into());
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Best vertex and gaps of a fixed loss vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GapProfile {
    pub true_loss: DVector<f64>,
    pub best: usize,
    pub best_value: f64,
    pub gap_min: f64,
}

impl GapProfile {
    /// Requires a unique minimizer of `<l*, a>` over the vertices.
    pub fn new(set: &PolytopeActionSet, true_loss: &DVector<f64>) -> Result<Self, EnvironmentError> {
        let values: Vec<f64> = set.vertices().iter().map(|v| v.dot(true_loss)).collect();
        let best = (0..values.len()).min_by(|&i, &j| values[i].total_cmp(&values[j])).expect("vertices");
        let gap_min = values
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != best)
            .map(|(_, v)| v - values[best])
            .fold(f64::INFINITY, f64::min);
        if !(gap_min > 1e-12) {
            return Err(EnvironmentError::NoUniqueOptimum(if gap_min.is_finite() { gap_min } else { 0.0 }));
        }
        Ok(GapProfile { true_loss: true_loss.clone(), best, best_value: values[best], gap_min })
    }

    /// `Delta(y) = <l*, y - a*>`.
    pub fn gap(&self, y: &DVector<f64>) -> f64 {
        y.dot(&self.true_loss) - self.best_value
    }
}

/// Everything the environment decided in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct Disclosure {
    pub round: u64,
    pub loss_vector: DVector<f64>,
    pub corruption: DVector<f64>,
    pub corruption_norm: f64,
    pub noise: f64,
    pub observed: f64,
    pub clamped: bool,
}

/// A running environment built from a spec.
#[derive(Debug, Clone)]
pub struct Environment {
    spec: EnvironmentSpec,
    vertices: Vec<DVector<f64>>,
    gaps: Option<GapProfile>,
    corruption_used: f64,
    corrupted_rounds: u64,
    clamp_count: u64,
    draws: u64,
    history: Vec<usize>,
    action_sum: DVector<f64>,
    last: Option<Disclosure>,
}

impl Environment {
    pub fn new(spec: EnvironmentSpec, set: &PolytopeActionSet) -> Result<Self, EnvironmentError> {
        spec.validate(set)?;
        let gaps = match &spec.true_loss {
            Some(l) => Some(GapProfile::new(set, &DVector::from_column_slice(l))?),
            None => None,
        };
        Ok(Environment {
            spec,
            vertices: set.vertices().to_vec(),
            gaps,
            corruption_used: 0.0,
            corrupted_rounds: 0,
            clamp_count: 0,
            draws: 0,
            history: Vec::new(),
            action_sum: DVector::zeros(set.dimension()),
            last: None,
        })
    }

    pub fn spec(&self) -> &EnvironmentSpec {
        &self.spec
    }

    pub fn gaps(&self) -> Option<&GapProfile> {
        self.gaps.as_ref()
    }

    pub fn corruption_used(&self) -> f64 {
        self.corruption_used
    }

    pub fn corrupted_rounds(&self) -> u64 {
        self.corrupted_rounds
    }

    pub fn clamp_count(&self) -> u64 {
        self.clamp_count
    }

    pub fn clamp_rate(&self) -> f64 {
        if self.draws == 0 {
            0.0
        } else {
            self.clamp_count as f64 / self.draws as f64
        }
    }

    pub fn last_disclosure(&self) -> Option<&Disclosure> {
        self.last.as_ref()
    }

    pub fn history(&self) -> &[usize] {
        &self.history
    }

    fn adversarial_loss(&self, round: u64) -> DVector<f64> {
        let d = self.action_sum.len();
        match self.spec.adversary.as_ref().expect("validated") {
            AdversaryRule::Alternating { coordinate, amplitude, base } => {
                let mut l = DVector::from_column_slice(base);
                let sign = if round % 2 == 1 { 1.0 } else { -1.0 };
                l[*coordinate] += sign * amplitude;
                l
            }
            AdversaryRule::Switching { period, losses } => {
                let k = ((round - 1) / period) as usize % losses.len();
                DVector::from_column_slice(&losses[k])
            }
            AdversaryRule::ChaseHistory { amplitude } => {
                if self.history.is_empty() {
                    return DVector::zeros(d);
                }
                let mean = &self.action_sum / self.history.len() as f64;
                let norm = mean.norm();
                if norm <= 1e-12 {
                    DVector::zeros(d)
                } else {
                    mean * (*amplitude / norm)
                }
            }
        }
    }

    fn corruption_for(&self, ctx: &RoundContext<'_>) -> Result<DVector<f64>, EnvironmentError> {
        let spec = self.spec.corruption.as_ref().expect("validated");
        let gaps = self.gaps.as_ref().expect("validated");
        let d = gaps.true_loss.len();
        let remaining = (spec.budget - self.corruption_used).max(0.0);
        if let CorruptionSchedule::Explicit { vectors } = &spec.schedule {
            let c = vectors
                .get((ctx.round - 1) as usize)
                .map(|v| DVector::from_column_slice(v))
                .unwrap_or_else(|| DVector::zeros(d));
            let would_reach = self.corruption_used + c.norm();
            if would_reach > spec.budget + 1e-12 {
                return Err(EnvironmentError::BudgetExceeded { budget: spec.budget, would_reach });
            }
            return Ok(c);
        }
        let full = &gaps.true_loss * (-spec.strength);
        let full_norm = full.norm();
        if remaining <= 0.0 || full_norm == 0.0 {
            return Ok(DVector::zeros(d));
        }
        let active = match &spec.schedule {
            CorruptionSchedule::FrontLoaded => true,
            CorruptionSchedule::Uniform => {
                let count = (spec.budget / full_norm).ceil();
                let horizon = ctx.horizon as f64;
                let t = ctx.round as f64;
                (t * count / horizon).floor() > ((t - 1.0) * count / horizon).floor()
            }
            CorruptionSchedule::Targeted { radius } => gaps.gap(ctx.decision_point) <= radius * gaps.gap_min,
            CorruptionSchedule::Explicit { .. } => unreachable!(),
        };
        if !active {
            return Ok(DVector::zeros(d));
        }
        Ok(if full_norm > remaining { full * (remaining / full_norm) } else { full })
    }

    /// Draws `f_t(a_t)` for the action in `ctx`.
    pub fn draw_loss(&mut self, ctx: &RoundContext<'_>, rng: &mut RunRng) -> Result<Disclosure, EnvironmentError> {
        let d = self.action_sum.len();
        let (loss_vector, corruption) = match self.spec.regime {
            Regime::Stochastic => {
                (self.gaps.as_ref().expect("validated").true_loss.clone(), DVector::zeros(d))
            }
            Regime::Corrupted => {
                let c = self.corruption_for(ctx)?;
                (&self.gaps.as_ref().expect("validated").true_loss + &c, c)
            }
            Regime::Adversarial => (self.adversarial_loss(ctx.round), DVector::zeros(d)),
        };
        let norm = loss_vector.norm();
        if norm > 1.0 + 1e-12 {
            return Err(EnvironmentError::LossNormExceeded(norm));
        }
        let corruption_norm = corruption.norm();
        let noise = self.spec.noise.sample(rng);
        let raw = loss_vector.dot(ctx.action) + noise;
        let observed = raw.clamp(-1.0, 1.0);
        let clamped = observed != raw;

        self.draws += 1;
        if clamped {
            self.clamp_count += 1;
        }
        if corruption_norm > 0.0 {
            self.corrupted_rounds += 1;
        }
        self.corruption_used += corruption_norm;
        self.history.push(ctx.action_index);
        self.action_sum += &self.vertices[ctx.action_index];
        let disclosure =
            Disclosure { round: ctx.round, loss_vector, corruption, corruption_norm, noise, observed, clamped };
        self.last = Some(disclosure.clone());
        Ok(disclosure)
    }
}

impl Feedback for Environment {
    fn observe(&mut self, ctx: &RoundContext<'_>, rng: &mut RunRng) -> Result<f64, String> {
        self.draw_loss(ctx, rng).map(|d| d.observed).map_err(|e| e.to_string())
    }
}

/// Post-run check that a disclosed sequence respects its regime.
pub fn check_disclosures(spec: &EnvironmentSpec, disclosures: &[Disclosure]) -> Vec<String> {
    let mut problems = Vec::new();
    let mut used = 0.0;
    for d in disclosures {
        if d.loss_vector.norm() > 1.0 + 1e-12 {
            problems.push(format!("round {}: ||l_t|| = {}", d.round, d.loss_vector.norm()));
        }
        if !(d.observed.abs() <= 1.0) {
            problems.push(format!("round {}: f_t = {}", d.round, d.observed));
        }
        if let Some(l) = &spec.true_loss {
            let expected = DVector::from_column_slice(l) + &d.corruption;
            if (expected - &d.loss_vector).amax() > 1e-12 {
                problems.push(format!("round {}: l_t != l* + c_t", d.round));
            }
        }
        used += d.corruption_norm;
    }
    match &spec.corruption {
        Some(c) if used > c.budget + 1e-9 => problems.push(format!("corruption {used} exceeds budget {}", c.budget)),
        None if used > 0.0 => problems.push("corruption in a non-corrupted regime".into()),
        _ => {}
    }
    problems
}

/// Writes a disclosed loss sequence as CSV (`round, loss_1..loss_d, corruption_norm, noise, observed, clamped`).
pub fn write_disclosures_csv<W: Write>(out: W, disclosures: &[Disclosure]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let d = disclosures.first().map_or(0, |x| x.loss_vector.len());
    let mut header = vec!["round".to_string()];
    header.extend((1..=d).map(|i| format!("loss_{i}")));
    header.extend(["corruption_norm", "noise", "observed", "clamped"].map(String::from));
    w.write_record(&header)?;
    for x in disclosures {
        let mut row = vec![x.round.to_string()];
        row.extend(x.loss_vector.iter().map(|v| format!("{v:.16e}")));
        row.push(format!("{:.16e}", x.corruption_norm));
        row.push(format!("{:.16e}", x.noise));
        row.push(format!("{:.16e}", x.observed));
        row.push(u8::from(x.clamped).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Who the regret is measured against.
#[derive(Debug, Clone, PartialEq)]
pub enum Comparator {
    /// The unique best vertex under `l*`.
    Fixed(GapProfile),
    /// The best vertex in hindsight for the losses seen so far.
    Hindsight,
}

/// Per-round pseudo-regret `<l_t, a_t - a*>` and diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretLedger {
    comparator: Comparator,
    vertices: Vec<DVector<f64>>,
    loss_sum: DVector<f64>,
    played_loss: f64,
    expected_loss: f64,
    clean_regret: f64,
    cumulative: f64,
    cumulative_expected: f64,
    pub sum_gap_of_point: f64,
    pub sum_ratio: f64,
    pub corruption_used: f64,
    rounds: u64,
    sum_sq_loss: f64,
    path_length: f64,
    previous_loss: Option<DVector<f64>>,
    increments: Vec<f64>,
}

/// One ledger step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedgerEntry {
    pub increment: f64,
    pub cumulative: f64,
    pub cumulative_expected: f64,
    pub cumulative_clean: f64,
    pub gap_of_point: f64,
}

impl RegretLedger {
    pub fn new(set: &PolytopeActionSet, spec: &EnvironmentSpec) -> Result<Self, EnvironmentError> {
        let comparator = match &spec.true_loss {
            Some(l) => Comparator::Fixed(GapProfile::new(set, &DVector::from_column_slice(l))?),
            None => Comparator::Hindsight,
        };
        let d = set.dimension();
        Ok(RegretLedger {
            comparator,
            vertices: set.vertices().to_vec(),
            loss_sum: DVector::zeros(d),
            played_loss: 0.0,
            expected_loss: 0.0,
            clean_regret: 0.0,
            cumulative: 0.0,
            cumulative_expected: 0.0,
            sum_gap_of_point: 0.0,
            sum_ratio: 0.0,
            corruption_used: 0.0,
            rounds: 0,
            sum_sq_loss: 0.0,
            path_length: 0.0,
            previous_loss: None,
            increments: Vec::new(),
        })
    }

    fn best_in_hindsight(&self) -> f64 {
        self.vertices.iter().map(|v| v.dot(&self.loss_sum)).fold(f64::INFINITY, f64::min)
    }

    /// Appends round `t`. Nothing earlier is recomputed.
    pub fn update(
        &mut self,
        loss: &DVector<f64>,
        action: usize,
        point: &DVector<f64>,
        ratio: f64,
        corruption_norm: f64,
    ) -> LedgerEntry {
        let a = &self.vertices[action];
        self.rounds += 1;
        self.sum_ratio += ratio;
        self.corruption_used += corruption_norm;
        self.sum_sq_loss += loss.norm_squared();
        if let Some(prev) = &self.previous_loss {
            self.path_length += (loss - prev).norm();
        }
        self.previous_loss = Some(loss.clone());

        let (increment, gap_of_point) = match &self.comparator {
            Comparator::Fixed(g) => {
                let best = &self.vertices[g.best];
                let inc = loss.dot(&(a - best));
                self.cumulative += inc;
                self.cumulative_expected += loss.dot(&(point - best));
                self.clean_regret += g.gap(a);
                let gp = g.gap(point);
                self.sum_gap_of_point += gp;
                (inc, gp)
            }
            Comparator::Hindsight => {
                self.loss_sum += loss;
                self.played_loss += loss.dot(a);
                self.expected_loss += loss.dot(point);
                let best = self.best_in_hindsight();
                let cumulative = self.played_loss - best;
                let inc = cumulative - self.cumulative;
                self.cumulative = cumulative;
                self.cumulative_expected = self.expected_loss - best;
                self.clean_regret = cumulative;
                (inc, f64::NAN)
            }
        };
        self.increments.push(increment);
        LedgerEntry {
            increment,
            cumulative: self.cumulative,
            cumulative_expected: self.cumulative_expected,
            cumulative_clean: self.clean_regret,
            gap_of_point,
        }
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    /// Cumulative pseudo-regret `sum <l_t, a_t - a*>`.
    pub fn cumulative(&self) -> f64 {
        self.cumulative
    }

    /// Same with the decision point in place of the played vertex.
    pub fn cumulative_expected(&self) -> f64 {
        self.cumulative_expected
    }

    /// Regret measured with the uncorrupted `l*` (equals [`Self::cumulative`] otherwise).
    pub fn cumulative_clean(&self) -> f64 {
        self.clean_regret
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn comparator(&self) -> &Comparator {
        &self.comparator
    }

    /// Quadratic variation `Q = min_m sum ||l_t - m||^2` of the losses so far.
    pub fn quadratic_variation(&self) -> f64 {
        if self.rounds == 0 {
            return 0.0;
        }
        let mean_sq = match &self.comparator {
            Comparator::Hindsight => (&self.loss_sum / self.rounds as f64).norm_squared(),
            Comparator::Fixed(_) => return f64::NAN,
        };
        (self.sum_sq_loss - self.rounds as f64 * mean_sq).max(0.0)
    }

    /// Path length `P = sum ||l_t - l_{t+1}||`.
    pub fn path_length(&self) -> f64 {
        self.path_length
    }

    /// `L* = min_a sum <l_t, a>` (hindsight comparator only).
    pub fn best_cumulative_loss(&self) -> f64 {
        match &self.comparator {
            Comparator::Hindsight => self.best_in_hindsight(),
            Comparator::Fixed(_) => f64::NAN,
        }
    }
}

/// Descriptive statistics `(L*, Q, P)` of a loss sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSequenceStats {
    pub best_cumulative_loss: f64,
    pub quadratic_variation: f64,
    pub path_length: f64,
}

impl LossSequenceStats {
    pub fn compute(set: &PolytopeActionSet, losses: &[DVector<f64>]) -> Self {
        let d = set.dimension();
        let n = losses.len().max(1) as f64;
        let sum = losses.iter().fold(DVector::zeros(d), |acc, l| acc + l);
        let mean = &sum / n;
        LossSequenceStats {
            best_cumulative_loss: set.vertices().iter().map(|v| v.dot(&sum)).fold(f64::INFINITY, f64::min),
            quadratic_variation: losses.iter().map(|l| (l - &mean).norm_squared()).sum(),
            path_length: losses.windows(2).map(|w| (&w[1] - &w[0]).norm()).sum(),
        }
    }
}

/// An action set paired with its environment, in document form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceDocument {
    pub name: String,
    pub action_set: PolytopeActionSet,
    pub environment: EnvironmentSpec,
}

/// Default gap, noise and targeting radius of the catalog instances.
pub const DEFAULT_GAP: f64 = 0.3;
pub const DEFAULT_SIGMA: f64 = 0.1;
pub const TARGET_RADIUS: f64 = 0.5;
/// Alternating instance: `l_t = (+-ALT_AMPLITUDE, ALT_BASE)`.
pub const ALT_AMPLITUDE: f64 = 0.8;
pub const ALT_BASE: f64 = 0.2;

fn parse_call(name: &str) -> Result<(String, Vec<f64>), EnvironmentError> {
    let name = name.trim();
    let Some(open) = name.find('(') else {
        return Ok((name.to_string(), Vec::new()));
    };
    let close = name
        .rfind(')')
        .filter(|c| *c > open && *c == name.len() - 1)
        .ok_or_else(|| EnvironmentError::UnknownInstance(name.to_string()))?;
    let args = name[open + 1..close]
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| EnvironmentError::UnknownInstance(name.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((name[..open].trim().to_string(), args))
}

fn arg(args: &[f64], i: usize, default: f64) -> f64 {
    args.get(i).copied().unwrap_or(default)
}

fn dimension_arg(args: &[f64], i: usize, default: usize, name: &str) -> Result<usize, EnvironmentError> {
    let v = arg(args, i, default as f64);
    if v < 1.0 || v.fract() != 0.0 {
        return Err(EnvironmentError::Invalid(format!("{name}: dimension must be a positive integer")));
    }
    Ok(v as usize)
}

/// `l* = c (1, ..., 1)` on `[0, 1/sqrt(d)]^d`: the origin is optimal and every
/// neighbouring vertex is exactly `gap` worse.
fn hypercube_stochastic(d: usize, gap: f64, sigma: f64) -> Result<(PolytopeActionSet, Vec<f64>, NoiseSpec), EnvironmentError> {
    if !(gap > 0.0) || gap * d as f64 > 1.0 {
        return Err(EnvironmentError::Invalid(format!("hypercube-stoch: need 0 < gap <= 1/d, got {gap}")));
    }
    let set = builtin_instance("hypercube", d)?;
    let c = gap * (d as f64).sqrt();
    Ok((set, vec![c; d], NoiseSpec { family: NoiseFamily::Uniform, scale: sigma, offset: 0.0 }))
}

/// Named benchmark instances.
///
/// - `hypercube-stoch(d, gap, sigma)`, defaults `(2, 0.3, 0.1)`;
/// - `square-adversarial-alternating`: first loss coordinate flips sign every round;
/// - `square-corrupted(C)`: `hypercube-stoch(2, 0.3, 0.1)` plus targeted corruption of total size `C`;
/// - `simplex-stoch(d)`: the `d + 1`-armed bandit embedded as the standard simplex.
pub fn instance_catalog(name: &str) -> Result<(PolytopeActionSet, EnvironmentSpec), EnvironmentError> {
    let (base, args) = parse_call(name)?;
    let (set, spec) = match base.as_str() {
        "hypercube-stoch" => {
            let d = dimension_arg(&args, 0, 2, &base)?;
            let (set, l, noise) = hypercube_stochastic(d, arg(&args, 1, DEFAULT_GAP), arg(&args, 2, DEFAULT_SIGMA))?;
            (set, EnvironmentSpec::stochastic(l, noise))
        }
        "square-adversarial-alternating" => {
            let set = builtin_instance("hypercube", 2)?;
            let rule = AdversaryRule::Alternating {
                coordinate: 0,
                amplitude: arg(&args, 0, ALT_AMPLITUDE),
                base: vec![0.0, arg(&args, 1, ALT_BASE)],
            };
            (set, EnvironmentSpec::adversarial(rule, NoiseSpec::none()))
        }
        "square-corrupted" => {
            let budget = arg(&args, 0, 0.0);
            let (set, l, noise) = hypercube_stochastic(2, DEFAULT_GAP, DEFAULT_SIGMA)?;
            let corruption = CorruptionSpec {
                budget,
                schedule: CorruptionSchedule::Targeted { radius: TARGET_RADIUS },
                strength: default_strength(),
            };
            (set, EnvironmentSpec::corrupted(l, noise, corruption))
        }
        "simplex-stoch" => {
            let d = dimension_arg(&args, 0, 2, &base)?;
            let set = builtin_instance("simplex", d)?;
            let base_level = 0.5 / (d as f64).sqrt();
            let l: Vec<f64> = (0..d).map(|i| base_level * (1.0 + i as f64 / d as f64)).collect();
            let noise = NoiseSpec { family: NoiseFamily::Uniform, scale: arg(&args, 1, DEFAULT_SIGMA), offset: 0.0 };
            (set, EnvironmentSpec::stochastic(l, noise))
        }
        _ => return Err(EnvironmentError::UnknownInstance(name.to_string())),
    };
    spec.validate(&set)?;
    Ok((set, spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::run_rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn ctx<'a>(round: u64, x: &'a DVector<f64>, idx: usize, a: &'a DVector<f64>) -> RoundContext<'a> {
        RoundContext { round, horizon: 100, decision_point: x, action_index: idx, action: a, ratio: 1.0 }
    }

    #[test]
    fn noiseless_stochastic_is_linear() {
        let (set, mut spec) = instance_catalog("hypercube-stoch(2, 0.3, 0.1)").unwrap();
        spec.noise = NoiseSpec::none();
        let mut env = Environment::new(spec.clone(), &set).unwrap();
        let mut rng = run_rng(0);
        let x = set.vertex_centroid();
        for (j, a) in set.vertices().iter().enumerate() {
            let d = env.draw_loss(&ctx(1, &x, j, a), &mut rng).unwrap();
            let l = v(spec.true_loss.as_ref().unwrap());
            assert_eq!(d.observed, l.dot(a));
        }
    }

    #[test]
    fn offset_noise_shifts_the_mean() {
        let (set, mut spec) = instance_catalog("hypercube-stoch").unwrap();
        spec.noise = NoiseSpec { family: NoiseFamily::Uniform, scale: 0.0, offset: 0.05 };
        let mut env = Environment::new(spec.clone(), &set).unwrap();
        let a = set.vertex(3).clone();
        let d = env.draw_loss(&ctx(1, &a, 3, &a), &mut run_rng(0)).unwrap();
        assert!((d.observed - (v(spec.true_loss.as_ref().unwrap()).dot(&a) + 0.05)).abs() < 1e-15);
    }

    #[test]
    fn catalog_gaps() {
        let (set, spec) = instance_catalog("hypercube-stoch(2, 0.3, 0.1)").unwrap();
        let l = v(spec.true_loss.as_ref().unwrap());
        let mut values: Vec<f64> = set.vertices().iter().map(|a| a.dot(&l)).collect();
        values.sort_by(f64::total_cmp);
        assert!((values[1] - values[0] - 0.3).abs() < 1e-12);
        assert!(l.norm() <= 1.0);

        let (set, spec) = instance_catalog("simplex-stoch(3)").unwrap();
        let g = GapProfile::new(&set, &v(spec.true_loss.as_ref().unwrap())).unwrap();
        assert!(g.gap_min > 0.0);
        assert_eq!(set.num_vertices(), 4);

        assert!(matches!(instance_catalog("nope"), Err(EnvironmentError::UnknownInstance(_))));
        assert!(instance_catalog("hypercube-stoch(2, 0.9)").is_err());
    }

    #[test]
    fn alternating_flips_and_reports_variation() {
        let (set, spec) = instance_catalog("square-adversarial-alternating").unwrap();
        let mut env = Environment::new(spec.clone(), &set).unwrap();
        let mut ledger = RegretLedger::new(&set, &spec).unwrap();
        let mut rng = run_rng(0);
        let mut losses = Vec::new();
        let x = set.vertex_centroid();
        for t in 1..=10 {
            let a = set.vertex(0).clone();
            let d = env.draw_loss(&ctx(t, &x, 0, &a), &mut rng).unwrap();
            assert_eq!(d.loss_vector[0], if t % 2 == 1 { ALT_AMPLITUDE } else { -ALT_AMPLITUDE });
            ledger.update(&d.loss_vector, 0, &x, 1.0, 0.0);
            losses.push(d.loss_vector);
        }
        let stats = LossSequenceStats::compute(&set, &losses);
        // ten alternating rounds: Q = 10 a^2, P = 9 * 2a
        assert!((stats.quadratic_variation - 10.0 * ALT_AMPLITUDE.powi(2)).abs() < 1e-12);
        assert!((stats.path_length - 18.0 * ALT_AMPLITUDE).abs() < 1e-12);
        assert!((ledger.quadratic_variation() - stats.quadratic_variation).abs() < 1e-12);
        assert!((ledger.path_length() - stats.path_length).abs() < 1e-12);
    }

    #[test]
    fn zero_budget_corruption_matches_stochastic() {
        let (set, stoch) = instance_catalog("hypercube-stoch(2, 0.3, 0.1)").unwrap();
        let (_, corrupt) = instance_catalog("square-corrupted(0)").unwrap();
        let mut a_env = Environment::new(stoch, &set).unwrap();
        let mut b_env = Environment::new(corrupt, &set).unwrap();
        let (mut ra, mut rb) = (run_rng(9), run_rng(9));
        let x = v(&[0.01, 0.01]);
        for t in 1..=50 {
            let j = (t % 4) as usize;
            let a = set.vertex(j).clone();
            let da = a_env.draw_loss(&ctx(t, &x, j, &a), &mut ra).unwrap();
            let db = b_env.draw_loss(&ctx(t, &x, j, &a), &mut rb).unwrap();
            assert_eq!(da.observed.to_bits(), db.observed.to_bits());
        }
    }

    #[test]
    fn generated_schedules_truncate_at_budget() {
        let (set, _) = instance_catalog("square-corrupted(1)").unwrap();
        for schedule in [CorruptionSchedule::FrontLoaded, CorruptionSchedule::Uniform, CorruptionSchedule::Targeted { radius: 10.0 }] {
            let l = vec![0.3, 0.3];
            let spec = EnvironmentSpec::corrupted(l, NoiseSpec::none(), CorruptionSpec { budget: 1.0, schedule, strength: 2.0 });
            let mut env = Environment::new(spec.clone(), &set).unwrap();
            let mut rng = run_rng(1);
            let x = set.vertex_centroid();
            let mut log = Vec::new();
            for t in 1..=100 {
                let a = set.vertex(1).clone();
                log.push(env.draw_loss(&ctx(t, &x, 1, &a), &mut rng).unwrap());
            }
            assert!((env.corruption_used() - 1.0).abs() < 1e-12, "{}", env.corruption_used());
            assert!(check_disclosures(&spec, &log).is_empty());
        }
    }

    #[test]
    fn explicit_schedule_over_budget_errors() {
        let (set, _) = instance_catalog("square-corrupted(1)").unwrap();
        let spec = EnvironmentSpec::corrupted(
            vec![0.3, 0.3],
            NoiseSpec::none(),
            CorruptionSpec {
                budget: 0.5,
                schedule: CorruptionSchedule::Explicit { vectors: vec![vec![-0.3, 0.0], vec![-0.3, 0.0]] },
                strength: 0.0,
            },
        );
        let mut env = Environment::new(spec, &set).unwrap();
        let mut rng = run_rng(1);
        let x = set.vertex_centroid();
        let a = set.vertex(0).clone();
        env.draw_loss(&ctx(1, &x, 0, &a), &mut rng).unwrap();
        assert!(matches!(
            env.draw_loss(&ctx(2, &x, 0, &a), &mut rng),
            Err(EnvironmentError::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn ledger_examples() {
        let (set, spec) = instance_catalog("hypercube-stoch(2, 0.3, 0.1)").unwrap();
        let mut ledger = RegretLedger::new(&set, &spec).unwrap();
        let l = v(spec.true_loss.as_ref().unwrap());
        let Comparator::Fixed(g) = ledger.comparator().clone() else { panic!() };
        let e = ledger.update(&l, g.best, set.vertex(g.best), 0.1, 0.0);
        assert_eq!(e.increment, 0.0);
        let worse = (0..4).find(|&j| (g.gap(set.vertex(j)) - 0.3).abs() < 1e-12).unwrap();
        let mut ledger = RegretLedger::new(&set, &spec).unwrap();
        for _ in 0..100 {
            ledger.update(&l, worse, set.vertex(worse), 1.0, 0.0);
        }
        assert!((ledger.cumulative() - 30.0).abs() < 1e-9);
    }

    #[test]
    fn corrupted_and_clean_regret_differ_by_at_most_twice_budget() {
        let (set, spec) = instance_catalog("square-corrupted(5)").unwrap();
        let mut env = Environment::new(spec.clone(), &set).unwrap();
        let mut ledger = RegretLedger::new(&set, &spec).unwrap();
        let mut rng = run_rng(4);
        let x = v(&[0.01, 0.02]);
        for t in 1..=200 {
            let j = (t % 4) as usize;
            let a = set.vertex(j).clone();
            let d = env.draw_loss(&ctx(t, &x, j, &a), &mut rng).unwrap();
            ledger.update(&d.loss_vector, j, &x, 1.0, d.corruption_norm);
        }
        assert!((ledger.corruption_used - 5.0).abs() < 1e-9);
        assert!((ledger.cumulative() - ledger.cumulative_clean()).abs() <= 2.0 * 5.0 + 1e-9);
        assert!(ledger.cumulative() != ledger.cumulative_clean());
    }

    #[test]
    fn chase_history_ignores_the_current_action() {
        let set = builtin_instance("hypercube", 2).unwrap();
        let spec = EnvironmentSpec::adversarial(AdversaryRule::ChaseHistory { amplitude: 0.5 }, NoiseSpec::none());
        let x = set.vertex_centroid();
        let mut first = Environment::new(spec.clone(), &set).unwrap();
        let mut second = Environment::new(spec, &set).unwrap();
        let mut rng = run_rng(0);
        for env in [&mut first, &mut second] {
            env.draw_loss(&ctx(1, &x, 3, set.vertex(3)), &mut rng).unwrap();
        }
        let l1 = first.draw_loss(&ctx(2, &x, 1, set.vertex(1)), &mut rng).unwrap().loss_vector;
        let l2 = second.draw_loss(&ctx(2, &x, 2, set.vertex(2)), &mut rng).unwrap().loss_vector;
        assert_eq!(l1, l2);
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let (set, spec) = instance_catalog("square-corrupted(50)").unwrap();
        let doc = InstanceDocument { name: "x".into(), action_set: set, environment: spec };
        let text = toml::to_string(&doc).unwrap();
        let back: InstanceDocument = toml::from_str(&text).unwrap();
        assert_eq!(back, doc);
    }
}
