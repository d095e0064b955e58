//! Logarithmic barrier of a polytope and the Newton machinery built on it.
//!
//! `psi(x) = -sum_i log(b_i - a_i . x)` is a theta-self-concordant barrier
//! with theta equal to the number of halfspaces.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::{PolytopeActionSet, MEMBERSHIP_TOL};
use crate::linalg::symmetric_eigen;

/// Slack at or below which a point counts as on the boundary.
pub const BOUNDARY_SLACK: f64 = 1e-14;
/// Newton decrement below which damped steps switch to full steps.
pub const DAMPING_THRESHOLD: f64 = 0.25;
/// Newton decrement at which the solver stops.
pub const NEWTON_TOL: f64 = 1e-10;
pub const MAX_NEWTON_ITERATIONS: usize = 500;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BarrierError {
    #[error("point is on or outside the boundary (min slack {min_slack:e} at halfspace {halfspace})")]
    BoundaryPoint { halfspace: usize, min_slack: f64 },
    #[error("Newton solver did not converge in {iterations} iterations (decrement {decrement:e})")]
    NoConvergence { iterations: usize, decrement: f64 },
    #[error("Dikin point {index} leaves the set by {violation:e}")]
    ContainmentViolation { index: usize, violation: f64 },
    #[error("barrier scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("hessian is not positive definite")]
    SingularHessian,
}

/// Value, gradient and Hessian of the barrier at a point, plus the Hessian's
/// eigenframe (eigenvalues ascending, eigenvectors as columns).
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierFrame {
    pub point: DVector<f64>,
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl BarrierFrame {
    pub fn dimension(&self) -> usize {
        self.point.len()
    }

    /// `sqrt(h^T H h)`.
    pub fn local_norm(&self, h: &DVector<f64>) -> f64 {
        h.dot(&(&self.hessian * h)).max(0.0).sqrt()
    }

    /// `sqrt(g^T H^{-1} g)`, evaluated in the eigenframe.
    pub fn dual_local_norm(&self, g: &DVector<f64>) -> f64 {
        let coords = self.eigenvectors.tr_mul(g);
        coords
            .iter()
            .zip(self.eigenvalues.iter())
            .map(|(c, l)| c * c / l)
            .sum::<f64>()
            .sqrt()
    }

    /// Unit eigenvector `e_i`.
    pub fn axis(&self, i: usize) -> DVector<f64> {
        self.eigenvectors.column(i).into_owned()
    }

    /// Half-axis `lambda_i^{-1/2} e_i` of the unit Dikin ellipsoid.
    pub fn half_axis(&self, i: usize) -> DVector<f64> {
        self.axis(i) / self.eigenvalues[i].sqrt()
    }
}

/// The 2d points `x +- lambda_i^{-1/2} e_i`, ordered `+e_0, -e_0, +e_1, -e_1, ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct DikinPointSet {
    pub center: DVector<f64>,
    pub points: Vec<DVector<f64>>,
}

impl DikinPointSet {
    /// Index in `points` of the pair member for axis `i` and sign `eps`.
    pub fn index_of(axis: usize, eps: i8) -> usize {
        2 * axis + usize::from(eps < 0)
    }

    pub fn centroid(&self) -> DVector<f64> {
        let n = self.points.len() as f64;
        self.points.iter().fold(DVector::zeros(self.center.len()), |acc, p| acc + p) / n
    }
}

/// Log barrier over the halfspace description of an action set.
#[derive(Debug, Clone, PartialEq)]
pub struct LogBarrier {
    normals: DMatrix<f64>,
    offsets: DVector<f64>,
}

impl LogBarrier {
    pub fn new(set: &PolytopeActionSet) -> Self {
        LogBarrier { normals: set.normals().clone(), offsets: set.offsets().clone() }
    }

    /// Self-concordance parameter (number of halfspaces).
    pub fn theta(&self) -> f64 {
        self.offsets.len() as f64
    }

    pub fn dimension(&self) -> usize {
        self.normals.ncols()
    }

    fn interior_slacks(&self, x: &DVector<f64>) -> Result<DVector<f64>, BarrierError> {
        let slacks = &self.offsets - &self.normals * x;
        let (halfspace, min_slack) = slacks
            .iter()
            .copied()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least one halfspace");
        if !(min_slack > BOUNDARY_SLACK) {
            return Err(BarrierError::BoundaryPoint { halfspace, min_slack });
        }
        Ok(slacks)
    }

    pub fn value(&self, x: &DVector<f64>) -> Result<f64, BarrierError> {
        Ok(-self.interior_slacks(x)?.iter().map(|s| s.ln()).sum::<f64>())
    }

    /// Value, gradient and Hessian without the eigendecomposition.
    pub fn derivatives(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>), BarrierError> {
        let slacks = self.interior_slacks(x)?;
        let value = -slacks.iter().map(|s| s.ln()).sum::<f64>();
        let inv = slacks.map(|s| 1.0 / s);
        let gradient = self.normals.tr_mul(&inv);
        let mut weighted = self.normals.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= inv[i];
        }
        let hessian = weighted.tr_mul(&weighted);
        Ok((value, gradient, hessian))
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> Result<BarrierFrame, BarrierError> {
        let (value, gradient, hessian) = self.derivatives(x)?;
        let (eigenvalues, eigenvectors) = symmetric_eigen(&hessian);
        if eigenvalues.iter().any(|l| !(*l > 0.0)) {
            return Err(BarrierError::SingularHessian);
        }
        Ok(BarrierFrame { point: x.clone(), value, gradient, hessian, eigenvalues, eigenvectors })
    }

    /// Newton decrement of `f(x) = c . x + scale * psi(x)` at `x`.
    pub fn newton_decrement(&self, linear: &DVector<f64>, scale: f64, x: &DVector<f64>) -> Result<f64, BarrierError> {
        if !(scale > 0.0) {
            return Err(BarrierError::NonPositiveScale(scale));
        }
        let frame = self.evaluate(x)?;
        let grad = linear + &frame.gradient * scale;
        Ok(frame.dual_local_norm(&grad) / scale.sqrt())
    }

    /// `psi(x) - psi(y) - <grad psi(y), x - y>`.
    pub fn bregman_divergence(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64, BarrierError> {
        let vx = self.value(x)?;
        let (vy, gy, _) = self.derivatives(y)?;
        Ok(vx - vy - gy.dot(&(x - y)))
    }

    /// Minimizes `c . x + scale * psi(x)` by damped Newton from `warm_start`.
    ///
    /// Steps are damped by `1 / (1 + decrement)` while the decrement exceeds
    /// [`DAMPING_THRESHOLD`], then taken in full until it drops to [`NEWTON_TOL`].
    pub fn minimize_linear_plus_barrier(
        &self,
        linear: &DVector<f64>,
        scale: f64,
        warm_start: &DVector<f64>,
    ) -> Result<NewtonSolution, BarrierError> {
        if !(scale > 0.0) {
            return Err(BarrierError::NonPositiveScale(scale));
        }
        let mut x = warm_start.clone();
        self.interior_slacks(&x)?;
        let mut decrement = f64::INFINITY;
        for iteration in 0..=MAX_NEWTON_ITERATIONS {
            let (_, grad_psi, hess_psi) = self.derivatives(&x)?;
            let grad = linear + grad_psi * scale;
            let chol = (hess_psi * scale).cholesky().ok_or(BarrierError::SingularHessian)?;
            let step = chol.solve(&grad);
            decrement = grad.dot(&step).max(0.0).sqrt();
            if decrement <= NEWTON_TOL {
                return Ok(NewtonSolution { point: x, decrement, iterations: iteration });
            }
            if iteration == MAX_NEWTON_ITERATIONS {
                break;
            }
            let mut t = if decrement > DAMPING_THRESHOLD { 1.0 / (1.0 + decrement) } else { 1.0 };
            // theory keeps every step inside the Dikin ellipsoid; guard rounding anyway
            loop {
                let candidate = &x - &step * t;
                if self.interior_slacks(&candidate).is_ok() {
                    x = candidate;
                    break;
                }
                t *= 0.5;
                if t < 1e-30 {
                    return Err(BarrierError::NoConvergence { iterations: iteration, decrement });
                }
            }
        }
        Err(BarrierError::NoConvergence { iterations: MAX_NEWTON_ITERATIONS, decrement })
    }

    /// Minimizer of the barrier alone.
    pub fn analytic_center(&self, start: &DVector<f64>) -> Result<DVector<f64>, BarrierError> {
        let zero = DVector::zeros(self.dimension());
        Ok(self.minimize_linear_plus_barrier(&zero, 1.0, start)?.point)
    }
}

/// Result of a Newton solve.
#[derive(Debug, Clone, PartialEq)]
pub struct NewtonSolution {
    pub point: DVector<f64>,
    pub decrement: f64,
    pub iterations: usize,
}

/// The 2d unit Dikin points of `frame`, checked against the set.
pub fn dikin_point_set(frame: &BarrierFrame, set: &PolytopeActionSet) -> Result<DikinPointSet, BarrierError> {
    let d = frame.dimension();
    let mut points = Vec::with_capacity(2 * d);
    for i in 0..d {
        let offset = frame.half_axis(i);
        points.push(&frame.point + &offset);
        points.push(&frame.point - &offset);
    }
    for (index, p) in points.iter().enumerate() {
        let worst = set.slacks(p).min();
        if worst < -1e-9 {
            return Err(BarrierError::ContainmentViolation { index, violation: -worst });
        }
    }
    debug_assert!(points.iter().all(|p| set.membership(p, 1e-9 + MEMBERSHIP_TOL)));
    Ok(DikinPointSet { center: frame.point.clone(), points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{builtin_instance, unit_box};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn unit_square_center_frame() {
        let barrier = LogBarrier::new(&unit_box(2));
        assert_eq!(barrier.theta(), 4.0);
        let frame = barrier.evaluate(&v(&[0.5, 0.5])).unwrap();
        assert!((frame.value - 4.0 * 2f64.ln()).abs() < 1e-12);
        assert!((frame.value - 2.772589).abs() < 1e-6);
        assert!(frame.gradient.amax() < 1e-15);
        assert!((frame.hessian.clone() - DMatrix::from_diagonal_element(2, 2, 8.0)).amax() < 1e-12);
        assert!((frame.eigenvalues.clone() - v(&[8.0, 8.0])).amax() < 1e-12);
    }

    #[test]
    fn boundary_points_are_rejected() {
        let barrier = LogBarrier::new(&unit_box(2));
        assert!(matches!(barrier.evaluate(&v(&[1.0, 0.5])), Err(BarrierError::BoundaryPoint { .. })));
        assert!(matches!(barrier.evaluate(&v(&[1.5, 0.5])), Err(BarrierError::BoundaryPoint { .. })));
    }

    #[test]
    fn local_norms_at_center() {
        let frame = LogBarrier::new(&unit_box(2)).evaluate(&v(&[0.5, 0.5])).unwrap();
        assert_eq!(frame.local_norm(&v(&[0.0, 0.0])), 0.0);
        assert!((frame.local_norm(&v(&[1.0, 0.0])) - 8f64.sqrt()).abs() < 1e-12);
        assert!((frame.dual_local_norm(&v(&[1.0, 0.0])) - 1.0 / 8f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn dikin_points_of_square_and_segment() {
        let sq = unit_box(2);
        let frame = LogBarrier::new(&sq).evaluate(&v(&[0.5, 0.5])).unwrap();
        let dikin = dikin_point_set(&frame, &sq).unwrap();
        let r = 8f64.powf(-0.5);
        assert!((r - 0.35355).abs() < 1e-5);
        let mut offsets: Vec<(f64, f64)> =
            dikin.points.iter().map(|p| (p[0] - 0.5, p[1] - 0.5)).collect();
        offsets.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expected = [(-r, 0.0), (0.0, -r), (0.0, r), (r, 0.0)];
        for (got, want) in offsets.iter().zip(expected.iter()) {
            assert!((got.0 - want.0).abs() < 1e-12 && (got.1 - want.1).abs() < 1e-12);
        }
        for p in &dikin.points {
            assert!((frame.local_norm(&(p - &frame.point)) - 1.0).abs() < 1e-12);
        }
        assert!((dikin.centroid() - &frame.point).amax() < 1e-10);

        let seg = unit_box(1);
        let frame = LogBarrier::new(&seg).evaluate(&v(&[0.5])).unwrap();
        assert!((frame.eigenvalues[0] - 8.0).abs() < 1e-12);
        let dikin = dikin_point_set(&frame, &seg).unwrap();
        assert!((dikin.points[0][0] - (0.5 + r)).abs() < 1e-12);
        assert!((dikin.points[1][0] - (0.5 - r)).abs() < 1e-12);
    }

    #[test]
    fn containment_violation_is_reported() {
        let sq = unit_box(2);
        let mut frame = LogBarrier::new(&sq).evaluate(&v(&[0.5, 0.5])).unwrap();
        frame.eigenvalues[0] = 1.0; // corrupt: half-axis of length 1
        assert!(matches!(dikin_point_set(&frame, &sq), Err(BarrierError::ContainmentViolation { .. })));
    }

    #[test]
    fn solver_zero_cost_finds_analytic_center() {
        let barrier = LogBarrier::new(&unit_box(2));
        for beta in [0.5, 1.0, 12.0] {
            let sol = barrier
                .minimize_linear_plus_barrier(&v(&[0.0, 0.0]), beta, &v(&[0.1, 0.8]))
                .unwrap();
            assert!((sol.point.clone() - v(&[0.5, 0.5])).amax() < 1e-9);
            assert!(sol.decrement <= NEWTON_TOL);
        }
    }

    /// Bisection on `1/x - 1/(1-x) = c` for the coordinate minimizer of
    /// `c x - log x - log(1-x)`.
    fn scalar_oracle(c: f64) -> f64 {
        let (mut lo, mut hi) = (1e-15, 1.0 - 1e-15);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if 1.0 / mid - 1.0 / (1.0 - mid) > c {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn solver_linear_cost_matches_scalar_oracle() {
        let barrier = LogBarrier::new(&unit_box(2));
        let sol = barrier
            .minimize_linear_plus_barrier(&v(&[1.0, 0.0]), 1.0, &v(&[0.5, 0.5]))
            .unwrap();
        let golden = scalar_oracle(1.0);
        // closed form root of x^2 - 3x + 1 = 0 inside (0, 1)
        assert!((golden - (3.0 - 5f64.sqrt()) / 2.0).abs() < 1e-12);
        assert!((sol.point[0] - golden).abs() < 1e-10);
        assert!((sol.point[1] - 0.5).abs() < 1e-10);
        let (_, g, _) = barrier.derivatives(&sol.point).unwrap();
        assert!((v(&[1.0, 0.0]) + g).norm() <= 1e-8);
    }

    #[test]
    fn solver_is_scale_invariant() {
        let set = builtin_instance("hypercube", 3).unwrap();
        let barrier = LogBarrier::new(&set);
        let c = v(&[3.0, -1.0, 0.25]);
        let start = set.vertex_centroid();
        let a = barrier.minimize_linear_plus_barrier(&c, 2.0, &start).unwrap();
        let b = barrier.minimize_linear_plus_barrier(&(c * 2.0), 4.0, &start).unwrap();
        assert!((a.point - b.point).amax() < 1e-10);
    }

    #[test]
    fn solver_survives_strong_pull_toward_a_vertex() {
        let set = builtin_instance("hypercube", 2).unwrap();
        let barrier = LogBarrier::new(&set);
        let sol = barrier
            .minimize_linear_plus_barrier(&v(&[4e4, 4e4]), 12.0, &set.vertex_centroid())
            .unwrap();
        assert!(sol.decrement <= NEWTON_TOL);
        assert!(set.slacks(&sol.point).min() > 0.0);
        assert!(barrier.newton_decrement(&v(&[4e4, 4e4]), 12.0, &sol.point).unwrap() <= 1e-9);
    }

    #[test]
    fn decrement_at_center_and_bad_scale() {
        let barrier = LogBarrier::new(&unit_box(2));
        assert!(barrier.newton_decrement(&v(&[0.0, 0.0]), 3.0, &v(&[0.5, 0.5])).unwrap() < 1e-15);
        assert!(matches!(
            barrier.newton_decrement(&v(&[0.0, 0.0]), 0.0, &v(&[0.5, 0.5])),
            Err(BarrierError::NonPositiveScale(_))
        ));
    }

    #[test]
    fn bregman_examples() {
        let barrier = LogBarrier::new(&unit_box(2));
        let y = v(&[0.5, 0.5]);
        assert_eq!(barrier.bregman_divergence(&y, &y).unwrap(), 0.0);
        let x = v(&[0.6, 0.5]);
        // gradient vanishes at the center, so D = psi(x) - psi(y)
        let direct = -(0.6f64.ln() + 0.4f64.ln() + 2.0 * 0.5f64.ln()) - 4.0 * 2f64.ln();
        assert!((barrier.bregman_divergence(&x, &y).unwrap() - direct).abs() < 1e-12);
        assert!(direct > 0.0);
    }
}
