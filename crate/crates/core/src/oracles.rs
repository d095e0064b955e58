//! Numeric verifiers for the supporting lemmas.
//!
//! Each verifier redoes its arithmetic from the raw halfspace data (slacks,
//! barrier derivatives, dense solves) instead of going through the
//! [`barrier`](crate::barrier) module, so a bug in the main path cannot cancel
//! out in the check.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::barrier::{dikin_point_set, LogBarrier};
use crate::environments::{Environment, EnvironmentSpec, NoiseFamily, NoiseSpec};
use crate::geometry::{builtin_instance, GeometryError, PolytopeActionSet};
use crate::learner::{
    check_round_invariants, estimate_loss_scaled, sample_action, select_reference_point, Learner, LearnerConfig,
    Mode, RunRng,
};

/// Outcome of one verifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub lemma: String,
    pub trials: u64,
    pub max_violation: f64,
    pub tolerance: f64,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
}

impl LemmaReport {
    pub fn new(lemma: impl Into<String>, trials: u64, max_violation: f64, tolerance: f64) -> Self {
        LemmaReport {
            lemma: lemma.into(),
            trials,
            max_violation,
            tolerance,
            passed: max_violation <= tolerance,
            note: String::new(),
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }
}

/// Fixed-width text table of reports.
pub fn render_reports(reports: &[LemmaReport]) -> String {
    let width = reports.iter().map(|r| r.lemma.len()).max().unwrap_or(5).max(5);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>8}  {:>12}  {:>10}  result", "lemma", "trials", "max viol.", "tolerance");
    for r in reports {
        let _ = write!(
            out,
            "{:<width$}  {:>8}  {:>12.4e}  {:>10.1e}  {}",
            r.lemma,
            r.trials,
            r.max_violation,
            r.tolerance,
            if r.passed { "pass" } else { "FAIL" }
        );
        if !r.note.is_empty() {
            let _ = write!(out, "  ({})", r.note);
        }
        out.push('\n');
    }
    out
}

// ---- independent arithmetic -------------------------------------------------

fn slacks(set: &PolytopeActionSet, x: &DVector<f64>) -> Vec<f64> {
    let n = set.normals();
    (0..n.nrows())
        .map(|i| set.offsets()[i] - (0..n.ncols()).map(|j| n[(i, j)] * x[j]).sum::<f64>())
        .collect()
}

fn psi(set: &PolytopeActionSet, x: &DVector<f64>) -> f64 {
    slacks(set, x).iter().map(|s| -s.ln()).sum()
}

fn gradient(set: &PolytopeActionSet, x: &DVector<f64>) -> DVector<f64> {
    let n = set.normals();
    let s = slacks(set, x);
    DVector::from_fn(n.ncols(), |j, _| (0..n.nrows()).map(|i| n[(i, j)] / s[i]).sum())
}

fn hessian(set: &PolytopeActionSet, x: &DVector<f64>) -> DMatrix<f64> {
    let n = set.normals();
    let s = slacks(set, x);
    let d = n.ncols();
    DMatrix::from_fn(d, d, |j, k| (0..n.nrows()).map(|i| n[(i, j)] * n[(i, k)] / (s[i] * s[i])).sum())
}

fn local_norm(h: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    (v.transpose() * h * v)[(0, 0)].max(0.0).sqrt()
}

fn dual_norm(h: &DMatrix<f64>, g: &DVector<f64>) -> f64 {
    let sol = h.clone().lu().solve(g).expect("barrier Hessian is nonsingular in the interior");
    g.dot(&sol).max(0.0).sqrt()
}

fn gauge(set: &PolytopeActionSet, z: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let sz = slacks(set, z);
    let sx = slacks(set, x);
    // n.(x - z) = s(z) - s(x)
    sz.iter().zip(&sx).map(|(a, b)| (a - b) / a).fold(0.0_f64, f64::max)
}

fn inside(set: &PolytopeActionSet, x: &DVector<f64>, tol: f64) -> bool {
    slacks(set, x).iter().all(|&s| s >= -tol)
}

/// `H^{-1/2}` applied to `u`.
fn inverse_sqrt_apply(h: &DMatrix<f64>, u: &DVector<f64>) -> DVector<f64> {
    let eig = h.clone().symmetric_eigen();
    let mut coeffs = eig.eigenvectors.transpose() * u;
    for (c, l) in coeffs.iter_mut().zip(eig.eigenvalues.iter()) {
        *c /= l.sqrt();
    }
    &eig.eigenvectors * coeffs
}

fn random_unit(d: usize, rng: &mut RunRng) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Random point of the interior: a random convex combination of the
/// vertices, pulled 5% of the way toward their centroid.
pub fn random_interior_point(set: &PolytopeActionSet, rng: &mut RunRng) -> DVector<f64> {
    let weights: Vec<f64> = (0..set.num_vertices()).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = weights.iter().sum();
    let mut x = DVector::zeros(set.dimension());
    for (v, w) in set.vertices().iter().zip(&weights) {
        x += v * (w / total);
    }
    let pull = rng.random_range(0.02..0.2);
    x * (1.0 - pull) + set.vertex_centroid() * pull
}

/// Random full-dimensional polytope inside the unit ball: an inscribed
/// polygon (`d = 2` only), a simplex, or a parallelotope.
pub fn random_polytope(d: usize, rng: &mut RunRng) -> PolytopeActionSet {
    let kind = if d == 2 { rng.random_range(0..3) } else { rng.random_range(1..3) };
    loop {
        let built = match kind {
            0 => random_polygon(rng),
            1 => random_simplex(d, rng),
            _ => random_parallelotope(d, rng),
        };
        if let Ok(set) = built {
            return set;
        }
    }
}

fn random_polygon(rng: &mut RunRng) -> Result<PolytopeActionSet, GeometryError> {
    let k = rng.random_range(3..9);
    let mut angles: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    angles.sort_by(f64::total_cmp);
    let radius = rng.random_range(0.3..1.0);
    let vertices: Vec<DVector<f64>> =
        angles.iter().map(|a| DVector::from_column_slice(&[radius * a.cos(), radius * a.sin()])).collect();
    let mut halfspaces = Vec::new();
    for i in 0..k {
        let (p, q) = (&vertices[i], &vertices[(i + 1) % k]);
        let e = q - p;
        let normal = DVector::from_column_slice(&[e[1], -e[0]]);
        if normal.norm() < 1e-3 {
            return Err(GeometryError::NotFullDimensional(0.0));
        }
        halfspaces.push((normal.clone(), normal.dot(p)));
    }
    PolytopeActionSet::new(vertices, halfspaces)
}

fn scaled_into_ball(points: Vec<DVector<f64>>) -> (Vec<DVector<f64>>, f64) {
    let max = points.iter().map(|p| p.norm()).fold(0.0, f64::max);
    let s = if max > 0.999 { 0.999 / max } else { 1.0 };
    (points.into_iter().map(|p| p * s).collect(), s)
}

fn random_simplex(d: usize, rng: &mut RunRng) -> Result<PolytopeActionSet, GeometryError> {
    let raw: Vec<DVector<f64>> = (0..=d).map(|_| random_unit(d, rng) * rng.random_range(0.3..1.0)).collect();
    let (vertices, _) = scaled_into_ball(raw);
    let basis = DMatrix::from_fn(d, d, |i, j| vertices[j + 1][i] - vertices[0][i]);
    if basis.determinant().abs() < 1e-3 {
        return Err(GeometryError::NotFullDimensional(0.0));
    }
    let inv = basis.try_inverse().ok_or(GeometryError::NotFullDimensional(0.0))?;
    // barycentric lambda_j = inv_j . (x - v0) >= 0, and sum_j lambda_j <= 1
    let mut halfspaces = Vec::new();
    for j in 0..d {
        let row = -inv.row(j).transpose();
        halfspaces.push((row.clone(), row.dot(&vertices[0])));
    }
    let total = inv.row_sum().transpose();
    halfspaces.push((total.clone(), 1.0 + total.dot(&vertices[0])));
    PolytopeActionSet::new(vertices, halfspaces)
}

fn random_parallelotope(d: usize, rng: &mut RunRng) -> Result<PolytopeActionSet, GeometryError> {
    let m = DMatrix::<f64>::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    if m.determinant().abs() < 0.05_f64 {
        return Err(GeometryError::NotFullDimensional(0.0));
    }
    let corner = random_unit(d, rng) * rng.random_range(0.0..0.5);
    let raw: Vec<DVector<f64>> = (0..1usize << d)
        .map(|mask| {
            let u = DVector::from_fn(d, |i, _| ((mask >> i) & 1) as f64);
            &corner + &m * u
        })
        .collect();
    let (vertices, s) = scaled_into_ball(raw);
    let corner = corner * s;
    let inv = (m * s).try_inverse().ok_or(GeometryError::NotFullDimensional(0.0))?;
    let mut halfspaces = Vec::new();
    for i in 0..d {
        let row = inv.row(i).transpose();
        let shift = row.dot(&corner);
        halfspaces.push((row.clone(), 1.0 + shift));
        halfspaces.push((-row, -shift));
    }
    PolytopeActionSet::new(vertices, halfspaces)
}

// ---- verifiers ---------------------------------------------------------------

/// Closed-form gauge against bisection on the membership predicate.
pub fn verify_gauge_bisection(set: &PolytopeActionSet, trials: u64, rng: &mut RunRng) -> LemmaReport {
    let mut worst: f64 = 0.0;
    for k in 0..trials {
        let z = random_interior_point(set, rng);
        let x = match k % 10 {
            0 => z.clone(),
            1 => set.vertex(rng.random_range(0..set.num_vertices())).clone(),
            _ => random_interior_point(set, rng),
        };
        let closed = match set.minkowski_gauge(&z, &x) {
            Ok(g) => g,
            Err(_) => return LemmaReport::new("gauge-bisection", k + 1, f64::INFINITY, 1e-9),
        };
        // smallest r with z + (x - z) / r inside; x is in the set so r <= 1
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let p = &z + (&x - &z) / mid;
            if inside(set, &p, 0.0) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        worst = worst.max((closed - hi).abs());
    }
    LemmaReport::new("gauge-bisection", trials, worst, 1e-9)
}

/// `psi(x) - psi(y) <= theta log(1 / (1 - gauge_y(x)))`.
pub fn verify_boundpsi(set: &PolytopeActionSet, trials: u64, rng: &mut RunRng) -> LemmaReport {
    let theta = set.num_halfspaces() as f64;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..trials {
        let x = random_interior_point(set, rng);
        let y = random_interior_point(set, rng);
        let pi = gauge(set, &y, &x);
        let rhs = theta * (1.0 / (1.0 - pi)).ln();
        worst = worst.max(psi(set, &x) - psi(set, &y) - rhs);
    }
    LemmaReport::new("boundpsi", trials, worst, 1e-8)
}

/// Dikin points of the main implementation lie in the set and at local
/// distance one from their center.
pub fn verify_dikin_containment(set: &PolytopeActionSet, trials: u64, rng: &mut RunRng) -> LemmaReport {
    let barrier = LogBarrier::new(set);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let x = random_interior_point(set, rng);
        let h = hessian(set, &x);
        let points = match barrier.evaluate(&x).map_err(|e| e.to_string()).and_then(|f| {
            dikin_point_set(&f, set).map_err(|e| e.to_string())
        }) {
            Ok(p) => p.points,
            Err(e) => return LemmaReport::new("dikin-containment", trials, f64::INFINITY, 1e-9).with_note(e),
        };
        for p in &points {
            let outside = slacks(set, p).iter().fold(0.0_f64, |acc, s| acc.max(-s));
            let radius_error = (local_norm(&h, &(p - &x)) - 1.0).abs();
            worst = worst.max(outside).max(radius_error);
        }
    }
    LemmaReport::new("dikin-containment", trials, worst, 1e-9)
}

/// `(1 - r)^2 H(y) <= H(x) <= (1 - r)^-2 H(y)` for `r = ||x - y||_x < 1`,
/// through the extreme generalized eigenvalues of `H(y)` relative to `H(x)`.
pub fn verify_hessian_monotonicity(set: &PolytopeActionSet, trials: u64, rng: &mut RunRng) -> LemmaReport {
    let d = set.dimension();
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..trials {
        let x = random_interior_point(set, rng);
        let hx = hessian(set, &x);
        let r = rng.random_range(0.0..0.95);
        let y = &x + inverse_sqrt_apply(&hx, &random_unit(d, rng)) * r;
        let hy = hessian(set, &y);
        let l = hx.clone().cholesky().expect("positive definite").l();
        let l_inv = l.try_inverse().expect("nonsingular");
        let rel = &l_inv * hy * l_inv.transpose();
        let mu = rel.symmetric_eigen().eigenvalues;
        let (lo, hi) = ((1.0 - r).powi(2), (1.0 - r).powi(-2));
        for m in mu.iter() {
            worst = worst.max((lo - m) / lo).max((m - hi) / hi);
        }
    }
    LemmaReport::new("hessian-monotonicity", trials, worst, 1e-8)
}

/// Sampled `max_{x in W_1(y)} gauge_{a*}(x) <= 2 Delta(y) / Delta_min`, plus
/// the exact `max_{W_1(y)} Delta = Delta(y) + ||l*||*_y <= 2 Delta(y)`.
pub fn verify_boundgamma(
    set: &PolytopeActionSet,
    true_loss: &DVector<f64>,
    trials: u64,
    rng: &mut RunRng,
) -> LemmaReport {
    const DIRECTIONS: usize = 1000;
    let values: Vec<f64> = set.vertices().iter().map(|v| v.dot(true_loss)).collect();
    let best = (0..values.len()).min_by(|&i, &j| values[i].total_cmp(&values[j])).expect("vertices");
    let gap_min =
        (0..values.len()).filter(|&j| j != best).map(|j| values[j] - values[best]).fold(f64::INFINITY, f64::min);
    if !(gap_min > 1e-12) {
        return LemmaReport::new("boundgamma", 0, f64::INFINITY, 1e-6).with_note("no unique optimal vertex");
    }
    let a_star = set.vertex(best).clone();
    let d = set.dimension();
    let mut worst = f64::NEG_INFINITY;
    let mut worst_exact = f64::NEG_INFINITY;
    for _ in 0..trials {
        let y = random_interior_point(set, rng);
        let h = hessian(set, &y);
        let delta_y = true_loss.dot(&(&y - &a_star));
        let bound = 2.0 * delta_y / gap_min;
        let eig = h.clone().symmetric_eigen();
        let mut max_gauge: f64 = 0.0;
        for i in 0..d {
            let axis = eig.eigenvectors.column(i) / eig.eigenvalues[i].sqrt();
            for sign in [1.0, -1.0] {
                max_gauge = max_gauge.max(gauge(set, &a_star, &(&y + &axis * sign)));
            }
        }
        for _ in 0..DIRECTIONS {
            let x = &y + inverse_sqrt_apply(&h, &random_unit(d, rng));
            max_gauge = max_gauge.max(gauge(set, &a_star, &x));
        }
        worst = worst.max(max_gauge - bound);
        let exact_max = delta_y + dual_norm(&h, true_loss);
        worst_exact = worst_exact.max(exact_max - 2.0 * delta_y);
    }
    let note = format!("sampled gauge slack {worst:.3e}, exact ellipsoid slack {worst_exact:.3e}");
    let violation = worst.max(worst_exact);
    LemmaReport::new("boundgamma", trials, violation, 1e-6).with_note(note)
}

/// `<l, x - y> - beta D(y, x) <= (2 / beta) ||l||*_x^2` whenever `||l||*_x <= beta / 3`.
pub fn verify_stability_lemma(set: &PolytopeActionSet, trials: u64, rng: &mut RunRng) -> LemmaReport {
    let d = set.dimension();
    let mut worst = f64::NEG_INFINITY;
    for k in 0..trials {
        let x = random_interior_point(set, rng);
        let h = hessian(set, &x);
        let grad = gradient(set, &x);
        let psi_x = psi(set, &x);
        let beta = rng.random_range(0.5..50.0);
        let direction = random_unit(d, rng);
        let scale = if k % 25 == 0 { 0.0 } else { rng.random_range(0.0..=1.0) * beta / 3.0 };
        let l = &direction * (scale / dual_norm(&h, &direction).max(1e-300));
        let l_dual = dual_norm(&h, &l);
        let rhs = 2.0 / beta * l_dual * l_dual;
        let newton = h.clone().lu().solve(&l).expect("nonsingular");
        let mut candidates = vec![x.clone(), random_interior_point(set, rng)];
        // toward the maximizer y = x - H^{-1} l / beta and beyond
        for t in [0.25, 0.5, 1.0, 1.5, 2.0, 4.0] {
            candidates.push(&x - &newton * (t / beta));
        }
        for y in candidates {
            if !slacks(set, &y).iter().all(|&s| s > 0.0) {
                continue;
            }
            let bregman = psi(set, &y) - psi_x - grad.dot(&(&y - &x));
            worst = worst.max(l.dot(&(&x - &y)) - beta * bregman - rhs);
        }
    }
    LemmaReport::new("boundstability", trials, worst, 1e-8)
}

/// One recorded round for the tracking bound.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingRound {
    pub action: DVector<f64>,
    pub observed: f64,
    pub explore: bool,
    pub loss: DVector<f64>,
    /// Predictor the learner actually used, if recorded.
    pub predictor: Option<DVector<f64>>,
}

/// Comparator sequences `u_1..u_{T+1}` for the tracking bound.
#[derive(Debug, Clone, PartialEq)]
pub enum ComparatorPath {
    /// `u_t = mean of l_1..l_T`.
    Mean,
    /// `u_t = l_t`, and `u_{T+1} = l_T`.
    Path,
    Zero,
    Constant(DVector<f64>),
}

impl ComparatorPath {
    pub fn name(&self) -> &'static str {
        match self {
            ComparatorPath::Mean => "mean",
            ComparatorPath::Path => "path",
            ComparatorPath::Zero => "zero",
            ComparatorPath::Constant(_) => "constant",
        }
    }

    pub fn sequence(&self, trace: &[TrackingRound], d: usize) -> Vec<DVector<f64>> {
        let n = trace.len();
        match self {
            ComparatorPath::Mean => {
                let sum = trace.iter().fold(DVector::zeros(d), |acc, r| acc + &r.loss);
                vec![sum / n.max(1) as f64; n + 1]
            }
            ComparatorPath::Path => {
                let mut u: Vec<DVector<f64>> = trace.iter().map(|r| r.loss.clone()).collect();
                u.push(u.last().cloned().unwrap_or_else(|| DVector::zeros(d)));
                u
            }
            ComparatorPath::Zero => vec![DVector::zeros(d); n + 1],
            ComparatorPath::Constant(c) => vec![c.clone(); n + 1],
        }
    }
}

/// Tracking-experts bound on `sum g_t(m_t)` for one comparator sequence.
///
/// Replays the predictor recursion from `m_1 = 0`. A recorded predictor that
/// disagrees with the replay by more than `1e-9` is reported as a violation.
pub fn verify_tracking_bound(trace: &[TrackingRound], comparators: &[DVector<f64>], eta: f64) -> LemmaReport {
    let name = "tracking";
    if trace.is_empty() {
        return LemmaReport::new(name, 0, 0.0, 1e-8);
    }
    let d = trace[0].action.len();
    if comparators.len() != trace.len() + 1 || !(eta > 0.0 && eta < 0.5) {
        return LemmaReport::new(name, trace.len() as u64, f64::INFINITY, 1e-8)
            .with_note("need T + 1 comparators and 0 < eta < 1/2");
    }
    if let Some(u) = comparators.iter().find(|u| u.norm() > 1.0 + 1e-12) {
        return LemmaReport::new(name, trace.len() as u64, f64::INFINITY, 1e-8)
            .with_note(format!("comparator outside the unit ball (norm {})", u.norm()));
    }
    let g = |r: &TrackingRound, u: &DVector<f64>| if r.explore { (r.action.dot(u) - r.observed).powi(2) } else { 0.0 };
    let mut m = DVector::zeros(d);
    let mut lhs = 0.0;
    let mut comparator_loss = 0.0;
    let mut mismatch: f64 = 0.0;
    for (r, u) in trace.iter().zip(comparators) {
        if let Some(p) = &r.predictor {
            mismatch = mismatch.max((p - &m).amax());
        }
        lhs += g(r, &m);
        comparator_loss += g(r, u);
        if r.explore {
            let step = &m - &r.action * (eta * (r.action.dot(&m) - r.observed));
            let n = step.norm();
            m = if n > 1.0 { step / n } else { step };
        }
    }
    let drift: f64 = comparators.windows(2).map(|w| (&w[1] - &w[0]).norm()).sum();
    let last = comparators.last().expect("nonempty").norm_squared();
    let rhs = comparator_loss / (1.0 - 2.0 * eta)
        + (2f64.sqrt() * drift + 0.5 * last) / (eta * (1.0 - 2.0 * eta));
    let violation = if mismatch > 1e-9 { f64::INFINITY } else { lhs - rhs };
    LemmaReport::new(name, trace.len() as u64, violation, 1e-8)
        .with_note(format!("sum g(m) = {lhs:.4}, bound = {rhs:.4}, replay mismatch {mismatch:.1e}"))
}

/// A frozen round for Monte-Carlo checks of the sampling scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct UnbiasednessFixture {
    pub set: PolytopeActionSet,
    pub point: DVector<f64>,
    pub loss: DVector<f64>,
    pub predictor: DVector<f64>,
    pub mode: Mode,
    pub estimator_scale: f64,
}

impl UnbiasednessFixture {
    /// The d = 2 hypercube instance at its analytic center, noiseless loss
    /// `l* = 0.3 sqrt(2) (1, 1)` and predictor `m = l* / 2`.
    pub fn hypercube(mode: Mode) -> Self {
        let set = builtin_instance("hypercube", 2).expect("builtin");
        let point = LogBarrier::new(&set).analytic_center(&set.vertex_centroid()).expect("center");
        let loss = DVector::from_element(2, 0.3 * 2f64.sqrt());
        let predictor = &loss * 0.5;
        UnbiasednessFixture { set, point, loss, predictor, mode, estimator_scale: 2.0 }
    }
}

/// Monte-Carlo means of the played action and the loss estimate.
///
/// Returns two reports: `unbiased-action` (`||mean a - x||_inf <= 0.01`) and
/// `unbiased-estimate` (`||mean l_hat - l||_inf <= 0.02`).
pub fn verify_unbiasedness(fixture: &UnbiasednessFixture, samples: u64, rng: &mut RunRng) -> Vec<LemmaReport> {
    let set = &fixture.set;
    let d = set.dimension();
    let failed = |note: String| {
        vec![
            LemmaReport::new("unbiased-action", 0, f64::INFINITY, 0.01).with_note(note.clone()),
            LemmaReport::new("unbiased-estimate", 0, f64::INFINITY, 0.02).with_note(note),
        ]
    };
    let frame = match LogBarrier::new(set).evaluate(&fixture.point) {
        Ok(f) => f,
        Err(e) => return failed(e.to_string()),
    };
    let reference = match fixture.mode {
        Mode::Baseline => None,
        Mode::ScaledUp => {
            let picked = dikin_point_set(&frame, set)
                .map_err(|e| e.to_string())
                .and_then(|p| select_reference_point(set, &p).map_err(|e| e.to_string()));
            match picked {
                Ok(r) => Some(r),
                Err(e) => return failed(e),
            }
        }
    };
    let mut action_sum = DVector::zeros(d);
    let mut estimate_sum = DVector::zeros(d);
    for _ in 0..samples {
        let draw = match sample_action(set, &frame, reference, rng) {
            Ok(x) => x,
            Err(e) => return failed(e.to_string()),
        };
        let a = set.vertex(draw.action);
        let f = fixture.loss.dot(a);
        match estimate_loss_scaled(&frame, &draw, a, &fixture.predictor, f, fixture.estimator_scale) {
            Ok(e) => estimate_sum += e,
            Err(e) => return failed(e.to_string()),
        }
        action_sum += a;
    }
    let n = samples.max(1) as f64;
    let action_err = (action_sum / n - &fixture.point).amax();
    let estimate_err = (estimate_sum / n - &fixture.loss).amax();
    let ratio = reference.map_or(1.0, |r| r.ratio);
    vec![
        LemmaReport::new("unbiased-action", samples, action_err, 0.01).with_note(format!("r = {ratio:.4}")),
        LemmaReport::new("unbiased-estimate", samples, estimate_err, 0.02),
    ]
}

/// Runs a full learner and counts rounds that break a per-round invariant.
/// An aborted run counts as one more violation.
pub fn verify_invariant_sweep(
    set: &PolytopeActionSet,
    spec: &EnvironmentSpec,
    config: &LearnerConfig,
) -> LemmaReport {
    let name = "invariant-sweep";
    let mut env = match Environment::new(spec.clone(), set) {
        Ok(e) => e,
        Err(e) => return LemmaReport::new(name, 0, f64::INFINITY, 0.0).with_note(e.to_string()),
    };
    let mut learner = match Learner::new(set.clone(), config.clone()) {
        Ok(l) => l,
        Err(e) => return LemmaReport::new(name, 0, f64::INFINITY, 0.0).with_note(e.to_string()),
    };
    let mut bad_rounds = 0u64;
    let mut first: Option<String> = None;
    while !learner.is_finished() {
        let before = learner.state().stability_sum;
        match learner.step(&mut env) {
            Ok(record) => {
                let violations = check_round_invariants(&record, before, set, learner.barrier());
                if let Some(v) = violations.first() {
                    bad_rounds += 1;
                    first.get_or_insert_with(|| format!("round {}: {} {}", v.round, v.invariant, v.detail));
                }
            }
            Err(e) => {
                bad_rounds += 1;
                first.get_or_insert_with(|| e.to_string());
                break;
            }
        }
    }
    let report = LemmaReport::new(name, learner.state().round, bad_rounds as f64, 0.0);
    match first {
        Some(note) => report.with_note(note),
        None => report,
    }
}

/// Instance with observed losses close to 1 in magnitude, which makes the
/// `beta >= 3 ||l_hat - m||*` precondition tight on early rounds.
pub fn high_loss_instance() -> (PolytopeActionSet, EnvironmentSpec) {
    let set = builtin_instance("simplex", 2).expect("builtin");
    let noise = NoiseSpec { family: NoiseFamily::Uniform, scale: 0.05, offset: 0.0 };
    (set, EnvironmentSpec::stochastic(vec![0.95, 0.3], noise))
}
