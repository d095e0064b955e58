//! Small dense helpers that nalgebra does not provide in the shape we need.

use nalgebra::{DMatrix, DVector};

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// A rotation on `(p, q)` is skipped once `|a_pq| <= tol * sqrt(|a_pp a_qq|)`,
/// which keeps small eigenvalues accurate to high relative precision for
/// positive definite matrices with a huge spread (barrier Hessians near a
/// vertex). Eigenvalues are returned in ascending order; each eigenvector
/// column is normalized so that its largest-magnitude entry is positive.
pub fn symmetric_eigen(matrix: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = matrix.nrows();
    assert_eq!(n, matrix.ncols(), "symmetric_eigen needs a square matrix");
    let mut a = matrix.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    const TOL: f64 = 1e-15;
    const MAX_SWEEPS: usize = 100;

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                let scale = (a[(p, p)] * a[(q, q)]).abs().sqrt();
                if apq.abs() <= TOL * scale || apq == 0.0 {
                    continue;
                }
                rotated = true;
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| a[(i, i)]));
    let mut vectors = DMatrix::<f64>::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        let mut e = v.column(i).into_owned();
        let lead = e.iter().copied().fold(0.0_f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            e.neg_mut();
        }
        vectors.set_column(col, &e);
    }
    (values, vectors)
}

/// Euclidean projection onto the closed unit ball.
pub fn project_unit_ball(v: &DVector<f64>) -> DVector<f64> {
    let norm = v.norm();
    if norm > 1.0 {
        v / norm
    } else {
        v.clone()
    }
}
