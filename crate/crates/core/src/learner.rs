//! The bandit learner: optimistic FTRL over the log barrier with scaled-up
//! Dikin sampling, plus the unscaled baseline that samples the Dikin points
//! directly.
//!
//! One round, in order:
//! 1. learning rate `beta_t` from the running stability sum;
//! 2. decision point `x_t` (Newton solve, warm-started at `x_{t-1}`);
//! 3. Hessian eigenframe and the 2d Dikin points;
//! 4. reference vertex `z_t` and ratio `r_t` (baseline: `r_t = 1`);
//! 5. action sampling, feedback, loss estimate, predictor update.
//!
//! Random draws consume the run's single stream in a fixed order each round:
//! one uniform for `b_t`; when `b_t = 1`, an axis index, a sign, and one uniform
//! for the vertex lottery; then whatever the feedback source draws.

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barrier::{dikin_point_set, BarrierError, BarrierFrame, DikinPointSet, LogBarrier, NEWTON_TOL};
use crate::geometry::{ConvexCombination, GeometryError, PolytopeActionSet};
use crate::linalg::project_unit_ball;

/// Random stream owned by one run.
pub type RunRng = ChaCha8Rng;

pub fn run_rng(seed: u64) -> RunRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Floor applied to `r_t` so the scaled-up point stays finite.
pub const MIN_RATIO: f64 = 1e-9;
pub const DEFAULT_ETA: f64 = 0.125;
/// Ties in `r_t` closer than this keep the lower vertex index.
const RATIO_TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Scaled-up sampling around the best reference vertex.
    ScaledUp,
    /// Vanilla sampling from the Dikin points (`r_t = 1`).
    Baseline,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::ScaledUp => "scaled-up",
            Mode::Baseline => "baseline",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scaled-up" => Ok(Mode::ScaledUp),
            "baseline" => Ok(Mode::Baseline),
            other => Err(format!("unknown mode `{other}` (expected scaled-up or baseline)")),
        }
    }
}

/// Deliberate perturbations of the algorithm's constants, used to check that
/// the verifiers notice broken learners. The default is the unperturbed algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FaultInjection {
    /// Added to `d` in the estimator's scale factor.
    pub estimator_scale_offset: f64,
    /// Multiplier of `d` in the constant term of `beta_t` (6 when unperturbed).
    pub beta_floor_factor: f64,
}

impl Default for FaultInjection {
    fn default() -> Self {
        FaultInjection { estimator_scale_offset: 0.0, beta_floor_factor: 6.0 }
    }
}

impl FaultInjection {
    pub fn is_clean(&self) -> bool {
        *self == FaultInjection::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub horizon: u64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub faults: FaultInjection,
}

fn default_eta() -> f64 {
    DEFAULT_ETA
}

fn default_mode() -> Mode {
    Mode::ScaledUp
}

impl LearnerConfig {
    pub fn new(horizon: u64, mode: Mode, seed: u64) -> Self {
        LearnerConfig { horizon, eta: DEFAULT_ETA, mode, seed, faults: FaultInjection::default() }
    }

    pub fn validate(&self) -> Result<(), LearnerError> {
        if self.horizon == 0 {
            return Err(LearnerError::InvalidConfig("horizon must be at least 1".into()));
        }
        if !(self.eta > 0.0 && self.eta < 0.25) {
            return Err(LearnerError::InvalidConfig(format!("eta must lie in (0, 1/4), got {}", self.eta)));
        }
        Ok(())
    }

    /// `log max(T, 2)`.
    pub fn log_horizon(&self) -> f64 {
        (self.horizon.max(2) as f64).ln()
    }

    fn estimator_scale(&self, d: usize) -> f64 {
        d as f64 + self.faults.estimator_scale_offset
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("invalid learner config: {0}")]
    InvalidConfig(String),
    #[error("action set vertices must lie in the unit ball (max norm {0})")]
    ActionSetOutsideUnitBall(f64),
    #[error(transparent)]
    Barrier(#[from] BarrierError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("observed loss {0} outside [-1, 1]")]
    LossOutOfRange(f64),
    #[error("horizon of {0} rounds exhausted")]
    HorizonExhausted(u64),
    #[error("feedback source failed: {0}")]
    Feedback(String),
}

/// Everything the learner carries between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    /// Number of completed rounds; the next round is `round + 1`.
    pub round: u64,
    pub cumulative_estimates: DVector<f64>,
    pub predictor: DVector<f64>,
    pub stability_sum: f64,
    pub previous_point: DVector<f64>,
}

impl LearnerState {
    pub fn initial(barrier: &LogBarrier, set: &PolytopeActionSet) -> Result<Self, LearnerError> {
        let d = set.dimension();
        let center = barrier.analytic_center(&set.vertex_centroid())?;
        Ok(LearnerState {
            round: 0,
            cumulative_estimates: DVector::zeros(d),
            predictor: DVector::zeros(d),
            stability_sum: 0.0,
            previous_point: center,
        })
    }
}

/// `beta = floor_factor * d + 2 d sqrt(stability_sum / (theta log T))`.
pub fn learning_rate_from_parts(
    stability_sum: f64,
    dimension: usize,
    theta: f64,
    log_horizon: f64,
    floor_factor: f64,
) -> f64 {
    let d = dimension as f64;
    floor_factor * d + 2.0 * d * (stability_sum.max(0.0) / (theta * log_horizon)).sqrt()
}

/// Learning rate `beta_t` for the upcoming round.
pub fn learning_rate(state: &LearnerState, barrier: &LogBarrier, config: &LearnerConfig) -> f64 {
    learning_rate_from_parts(
        state.stability_sum,
        barrier.dimension(),
        barrier.theta(),
        config.log_horizon(),
        config.faults.beta_floor_factor,
    )
}

/// FTRL decision point: minimizer of `<m_t + sum of estimates, x> + beta psi(x)`.
pub fn compute_decision_point(
    state: &LearnerState,
    barrier: &LogBarrier,
    beta: f64,
) -> Result<(DVector<f64>, f64), BarrierError> {
    let linear = &state.predictor + &state.cumulative_estimates;
    let sol = barrier.minimize_linear_plus_barrier(&linear, beta, &state.previous_point)?;
    Ok((sol.point, sol.decrement))
}

/// Chosen reference vertex and the ratio `r_t = max_x gauge_z(x)` over the Dikin points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferencePoint {
    pub vertex: usize,
    pub ratio: f64,
}

/// Strategy for picking the reference vertex `z_t`.
pub trait ReferenceSelector: Send + Sync {
    fn select(&self, set: &PolytopeActionSet, dikin: &DikinPointSet) -> Result<ReferencePoint, GeometryError>;
}

/// `max_{x in dikin} gauge_z(x)` for one candidate pole.
pub fn reference_ratio(set: &PolytopeActionSet, pole: usize, dikin: &DikinPointSet) -> Result<f64, GeometryError> {
    let z = set.vertex(pole);
    dikin
        .points
        .iter()
        .try_fold(0.0_f64, |acc, x| Ok(acc.max(set.minkowski_gauge(z, x)?)))
}

fn best_of(
    set: &PolytopeActionSet,
    dikin: &DikinPointSet,
    candidates: impl IntoIterator<Item = usize>,
) -> Result<ReferencePoint, GeometryError> {
    let mut best: Option<ReferencePoint> = None;
    for vertex in candidates {
        let ratio = reference_ratio(set, vertex, dikin)?;
        match best {
            Some(b) if ratio >= b.ratio - RATIO_TIE_TOL => {}
            _ => best = Some(ReferencePoint { vertex, ratio }),
        }
    }
    let best = best.ok_or(GeometryError::Empty)?;
    Ok(ReferencePoint { vertex: best.vertex, ratio: best.ratio.clamp(MIN_RATIO, 1.0) })
}

/// Exhaustive minimization over every vertex; exact, `O(|A| d m)` per round.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExhaustiveSelector;

impl ReferenceSelector for ExhaustiveSelector {
    fn select(&self, set: &PolytopeActionSet, dikin: &DikinPointSet) -> Result<ReferencePoint, GeometryError> {
        best_of(set, dikin, 0..set.num_vertices())
    }
}

/// Only scores the `count` vertices closest to the decision point.
/// Cheaper for large action sets, with no optimality guarantee.
#[derive(Debug, Clone, Copy)]
pub struct NearestVerticesSelector {
    pub count: usize,
}

impl ReferenceSelector for NearestVerticesSelector {
    fn select(&self, set: &PolytopeActionSet, dikin: &DikinPointSet) -> Result<ReferencePoint, GeometryError> {
        let mut order: Vec<(usize, f64)> = set
            .vertices()
            .iter()
            .enumerate()
            .map(|(j, v)| (j, (v - &dikin.center).norm()))
            .collect();
        order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let mut chosen: Vec<usize> = order.into_iter().take(self.count.max(1)).map(|(j, _)| j).collect();
        chosen.sort_unstable();
        best_of(set, dikin, chosen)
    }
}

/// Exhaustive reference selection (`kappa = 1`).
pub fn select_reference_point(
    set: &PolytopeActionSet,
    dikin: &DikinPointSet,
) -> Result<ReferencePoint, GeometryError> {
    ExhaustiveSelector.select(set, dikin)
}

/// Outcome of the sampling step of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDraw {
    /// `b_t`.
    pub explore: bool,
    /// `(i_t, eps_t)`, present iff `explore`.
    pub direction: Option<(usize, i8)>,
    /// `a'_t`, the mean of the vertex lottery.
    pub pre_action: DVector<f64>,
    pub action: usize,
    pub combination: Option<ConvexCombination>,
}

/// Reference used by [`sample_action`]: `None` means the unscaled baseline.
pub fn sample_action(
    set: &PolytopeActionSet,
    frame: &BarrierFrame,
    reference: Option<ReferencePoint>,
    rng: &mut RunRng,
) -> Result<ActionDraw, GeometryError> {
    let d = set.dimension();
    let ratio = reference.map_or(1.0, |r| r.ratio);
    let explore = rng.random::<f64>() < ratio;
    if !explore {
        let z = reference.expect("b_t = 0 needs a reference vertex").vertex;
        return Ok(ActionDraw {
            explore,
            direction: None,
            pre_action: set.vertex(z).clone(),
            action: z,
            combination: None,
        });
    }
    let axis = rng.random_range(0..d);
    let sign: i8 = if rng.random::<bool>() { 1 } else { -1 };
    let dikin_point = &frame.point + frame.half_axis(axis) * f64::from(sign);
    let pre_action = match reference {
        Some(r) => {
            let z = set.vertex(r.vertex);
            z + (dikin_point - z) / r.ratio
        }
        None => dikin_point,
    };
    let combination = set.caratheodory_decompose(&pre_action)?;
    let action = combination.sample_with(rng.random::<f64>());
    Ok(ActionDraw { explore, direction: Some((axis, sign)), pre_action, action, combination: Some(combination) })
}

/// Importance-weighted estimate
/// `m + scale * b * eps * lambda_i^{1/2} (f - <m, a>) e_i`.
pub fn estimate_loss_scaled(
    frame: &BarrierFrame,
    draw: &ActionDraw,
    action: &DVector<f64>,
    predictor: &DVector<f64>,
    observed: f64,
    scale: f64,
) -> Result<DVector<f64>, LearnerError> {
    if !(observed.abs() <= 1.0 + 1e-9) {
        return Err(LearnerError::LossOutOfRange(observed));
    }
    let Some((axis, sign)) = draw.direction else {
        return Ok(predictor.clone());
    };
    let residual = observed - predictor.dot(action);
    let weight = scale * f64::from(sign) * frame.eigenvalues[axis].sqrt() * residual;
    Ok(predictor + frame.axis(axis) * weight)
}

/// [`estimate_loss_scaled`] with the unperturbed scale `d`.
pub fn estimate_loss(
    frame: &BarrierFrame,
    draw: &ActionDraw,
    action: &DVector<f64>,
    predictor: &DVector<f64>,
    observed: f64,
) -> Result<DVector<f64>, LearnerError> {
    estimate_loss_scaled(frame, draw, action, predictor, observed, frame.dimension() as f64)
}

/// `g_t(m) = b_t (<a_t, m> - f_t)^2`.
pub fn stability_term(explore: bool, action: &DVector<f64>, predictor: &DVector<f64>, observed: f64) -> f64 {
    if explore {
        (action.dot(predictor) - observed).powi(2)
    } else {
        0.0
    }
}

/// One projected gradient step of the optimistic predictor on `g_t`.
pub fn update_predictor(
    predictor: &DVector<f64>,
    explore: bool,
    action: &DVector<f64>,
    observed: f64,
    eta: f64,
) -> DVector<f64> {
    if !explore {
        return predictor.clone();
    }
    let grad_scale = action.dot(predictor) - observed;
    project_unit_ball(&(predictor - action * (eta * grad_scale)))
}

/// What the feedback source sees of the round in progress.
#[derive(Debug, Clone, Copy)]
pub struct RoundContext<'a> {
    pub round: u64,
    pub horizon: u64,
    pub decision_point: &'a DVector<f64>,
    pub action_index: usize,
    pub action: &'a DVector<f64>,
    pub ratio: f64,
}

/// Source of the bandit feedback `f_t(a_t)`.
pub trait Feedback {
    fn observe(&mut self, ctx: &RoundContext<'_>, rng: &mut RunRng) -> Result<f64, String>;
}

/// Full trace of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: u64,
    pub beta: f64,
    pub point: DVector<f64>,
    pub decrement: f64,
    pub eigenvalues: DVector<f64>,
    pub dikin: DikinPointSet,
    /// `z_t`; `None` in baseline mode.
    pub reference: Option<usize>,
    pub ratio: f64,
    /// `x'_t = z_t + (x_t - z_t) / r_t` (diagnostic only).
    pub scaled_center: DVector<f64>,
    pub explore: bool,
    pub direction: Option<(usize, i8)>,
    pub pre_action: DVector<f64>,
    pub action: usize,
    pub action_vector: DVector<f64>,
    pub observed: f64,
    /// `m_t`, the predictor used this round.
    pub predictor: DVector<f64>,
    pub estimate: DVector<f64>,
    pub stability: f64,
    /// `||estimate - m_t||_{x_t}^*`.
    pub estimate_dual_norm: f64,
}

/// Stage of a round, for failure reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Solve,
    Frame,
    Reference,
    Sampling,
    Feedback,
    Estimate,
}

/// Whatever was computed before a round aborted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PartialRound {
    pub beta: Option<f64>,
    pub point: Option<DVector<f64>>,
    pub reference: Option<ReferencePoint>,
    pub pre_action: Option<DVector<f64>>,
    pub action: Option<usize>,
}

#[derive(Debug, Clone, Error)]
#[error("round {round} aborted at {stage:?}: {source}")]
pub struct StepFailure {
    pub round: u64,
    pub stage: Stage,
    pub partial: PartialRound,
    #[source]
    pub source: LearnerError,
}

/// One round as a pure function of the incoming state.
pub fn step(
    state: &LearnerState,
    set: &PolytopeActionSet,
    barrier: &LogBarrier,
    config: &LearnerConfig,
    selector: &dyn ReferenceSelector,
    feedback: &mut dyn Feedback,
    rng: &mut RunRng,
) -> Result<(RoundRecord, LearnerState), StepFailure> {
    let round = state.round + 1;
    let mut partial = PartialRound::default();
    macro_rules! fail {
        ($stage:expr, $err:expr) => {
            return Err(StepFailure { round, stage: $stage, partial, source: $err.into() })
        };
    }
    if state.round >= config.horizon {
        fail!(Stage::Solve, LearnerError::HorizonExhausted(config.horizon));
    }

    let beta = learning_rate(state, barrier, config);
    partial.beta = Some(beta);
    let (point, decrement) = match compute_decision_point(state, barrier, beta) {
        Ok(v) => v,
        Err(e) => fail!(Stage::Solve, e),
    };
    partial.point = Some(point.clone());

    let frame = match barrier.evaluate(&point) {
        Ok(f) => f,
        Err(e) => fail!(Stage::Frame, e),
    };
    let dikin = match dikin_point_set(&frame, set) {
        Ok(p) => p,
        Err(e) => fail!(Stage::Frame, e),
    };

    let reference = match config.mode {
        Mode::Baseline => None,
        Mode::ScaledUp => match selector.select(set, &dikin) {
            Ok(r) => Some(r),
            Err(e) => fail!(Stage::Reference, e),
        },
    };
    partial.reference = reference;
    let ratio = reference.map_or(1.0, |r| r.ratio);
    let scaled_center = match reference {
        Some(r) => {
            let z = set.vertex(r.vertex);
            z + (&point - z) / r.ratio
        }
        None => point.clone(),
    };

    let draw = match sample_action(set, &frame, reference, rng) {
        Ok(d) => d,
        Err(e) => fail!(Stage::Sampling, e),
    };
    partial.pre_action = Some(draw.pre_action.clone());
    partial.action = Some(draw.action);
    let action_vector = set.vertex(draw.action).clone();

    let ctx = RoundContext {
        round,
        horizon: config.horizon,
        decision_point: &point,
        action_index: draw.action,
        action: &action_vector,
        ratio,
    };
    let observed = match feedback.observe(&ctx, rng) {
        Ok(f) => f,
        Err(e) => fail!(Stage::Feedback, LearnerError::Feedback(e)),
    };

    let scale = config.estimator_scale(set.dimension());
    let estimate =
        match estimate_loss_scaled(&frame, &draw, &action_vector, &state.predictor, observed, scale) {
            Ok(e) => e,
            Err(e) => fail!(Stage::Estimate, e),
        };
    let stability = stability_term(draw.explore, &action_vector, &state.predictor, observed);
    let estimate_dual_norm = frame.dual_local_norm(&(&estimate - &state.predictor));
    let next_predictor = update_predictor(&state.predictor, draw.explore, &action_vector, observed, config.eta);

    let next = LearnerState {
        round,
        cumulative_estimates: &state.cumulative_estimates + &estimate,
        predictor: next_predictor,
        stability_sum: state.stability_sum + stability,
        previous_point: point.clone(),
    };
    let record = RoundRecord {
        round,
        beta,
        point,
        decrement,
        eigenvalues: frame.eigenvalues.clone(),
        dikin,
        reference: reference.map(|r| r.vertex),
        ratio,
        scaled_center,
        explore: draw.explore,
        direction: draw.direction,
        pre_action: draw.pre_action,
        action: draw.action,
        action_vector,
        observed,
        predictor: state.predictor.clone(),
        estimate,
        stability,
        estimate_dual_norm,
    };
    Ok((record, next))
}

/// Stateful wrapper owning the action set, barrier, state and random stream.
pub struct Learner {
    set: PolytopeActionSet,
    barrier: LogBarrier,
    config: LearnerConfig,
    state: LearnerState,
    rng: RunRng,
    selector: Box<dyn ReferenceSelector>,
}

impl std::fmt::Debug for Learner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Learner").field("config", &self.config).field("state", &self.state).finish()
    }
}

impl Learner {
    pub fn new(set: PolytopeActionSet, config: LearnerConfig) -> Result<Self, LearnerError> {
        Self::with_selector(set, config, Box::new(ExhaustiveSelector))
    }

    pub fn with_selector(
        set: PolytopeActionSet,
        config: LearnerConfig,
        selector: Box<dyn ReferenceSelector>,
    ) -> Result<Self, LearnerError> {
        config.validate()?;
        let max_norm = set.max_vertex_norm();
        if max_norm > 1.0 + 1e-12 {
            return Err(LearnerError::ActionSetOutsideUnitBall(max_norm));
        }
        let barrier = LogBarrier::new(&set);
        let state = LearnerState::initial(&barrier, &set)?;
        let rng = run_rng(config.seed);
        Ok(Learner { set, barrier, config, state, rng, selector })
    }

    pub fn step(&mut self, feedback: &mut dyn Feedback) -> Result<RoundRecord, StepFailure> {
        let (record, next) = step(
            &self.state,
            &self.set,
            &self.barrier,
            &self.config,
            self.selector.as_ref(),
            feedback,
            &mut self.rng,
        )?;
        self.state = next;
        Ok(record)
    }

    pub fn state(&self) -> &LearnerState {
        &self.state
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    pub fn set(&self) -> &PolytopeActionSet {
        &self.set
    }

    pub fn barrier(&self) -> &LogBarrier {
        &self.barrier
    }

    pub fn is_finished(&self) -> bool {
        self.state.round >= self.config.horizon
    }
}

/// A per-round invariant that did not hold.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantViolation {
    pub round: u64,
    pub invariant: &'static str,
    pub detail: String,
}

/// Checks the per-round invariants of a finished round.
///
/// The dual-norm identity uses the true dimension of `set`, not the
/// learner's estimator scale, so a perturbed learner fails it.
pub fn check_round_invariants(
    record: &RoundRecord,
    previous_stability_sum: f64,
    set: &PolytopeActionSet,
    barrier: &LogBarrier,
) -> Vec<InvariantViolation> {
    let mut out = Vec::new();
    let round = record.round;
    let mut flag = |invariant: &'static str, detail: String| {
        out.push(InvariantViolation { round, invariant, detail });
    };
    let d = set.dimension() as f64;

    if record.decrement > NEWTON_TOL {
        flag("newton-decrement", format!("{:e}", record.decrement));
    }
    let min_slack = set.slacks(&record.point).min();
    if !(min_slack > 0.0) {
        flag("interior-point", format!("min slack {min_slack:e}"));
    }
    if record.predictor.norm() > 1.0 + 1e-12 {
        flag("predictor-norm", format!("{}", record.predictor.norm()));
    }
    if record.stability > 4.0 + 1e-12 || record.stability < 0.0 {
        flag("stability-bound", format!("g_t = {}", record.stability));
    }
    if record.stability < 0.0 || previous_stability_sum.is_nan() {
        flag("stability-sum-monotone", String::new());
    }
    if !set.membership(&record.pre_action, 1e-9) {
        flag("pre-action-membership", format!("{:?}", record.pre_action.as_slice()));
    }
    if let Some(z) = record.reference {
        let zv = set.vertex(z);
        if !record.explore && (&record.pre_action - zv).amax() > 1e-12 {
            flag("pre-action-reference", "b_t = 0 but a'_t != z_t".into());
        }
    }
    if let Some((axis, sign)) = record.direction {
        match barrier.evaluate(&record.point) {
            Ok(frame) => {
                let dikin_point = &record.point + frame.half_axis(axis) * f64::from(sign);
                let expected = match record.reference {
                    Some(z) => {
                        let zv = set.vertex(z);
                        zv + (dikin_point - zv) / record.ratio
                    }
                    None => dikin_point,
                };
                if (&expected - &record.pre_action).amax() > 1e-9 {
                    flag("pre-action-formula", format!("off by {:e}", (&expected - &record.pre_action).amax()));
                }
            }
            Err(e) => flag("frame", e.to_string()),
        }
    }
    let lhs = record.estimate_dual_norm.powi(2);
    let rhs = d * d * record.stability;
    if (lhs - rhs).abs() > 1e-8 * rhs.max(1.0) {
        flag("estimator-dual-norm", format!("||l - m||*^2 = {lhs}, d^2 g = {rhs}"));
    }
    if record.beta < 3.0 * record.estimate_dual_norm - 1e-12 {
        flag(
            "stability-precondition",
            format!("beta = {} < 3 ||l - m||* = {}", record.beta, 3.0 * record.estimate_dual_norm),
        );
    }
    out
}
