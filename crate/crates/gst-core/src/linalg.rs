//! Small dense symmetric linear algebra: a cyclic Jacobi eigensolver and a
//! seeded random-rotation generator. Everything here targets matrices with
//! n ≤ 256, which covers every task family this toolkit builds.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use ndarray::{Array1, Array2};
use rand_distr::{Distribution, StandardNormal};

/// Maximum matrix side the eigensolver accepts.
pub const MAX_EIGEN_N: usize = 256;
const MAX_SWEEPS: usize = 64;

/// Verifies `s` is square and symmetric within `tol` (absolute, relative to
/// the largest entry magnitude).
pub fn check_symmetric(s: &Array2<f64>, tol: f64) -> Result<()> {
    let (rows, cols) = s.dim();
    if rows != cols {
        return Err(Error::NotSquare { rows, cols });
    }
    let scale = s.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1.0);
    let mut max_dev = 0.0f64;
    for i in 0..rows {
        for j in (i + 1)..rows {
            max_dev = max_dev.max((s[[i, j]] - s[[j, i]]).abs());
        }
    }
    if max_dev > tol * scale {
        return Err(Error::NotSymmetric { max_dev, tol: tol * scale });
    }
    Ok(())
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching eigenvectors as
/// columns, so `s ≈ V diag(λ) V^T`. Input must be symmetric within 1e-10
/// (relative); non-convergence after a fixed sweep budget is an error.
pub fn jacobi_eigendecomposition(
    s: &Array2<f64>,
    tol: f64,
) -> Result<(Array1<f64>, Array2<f64>)> {
    check_symmetric(s, 1e-10)?;
    let n = s.nrows();
    if n > MAX_EIGEN_N {
        return Err(Error::Structural {
            context: "eigensolver input".into(),
            expected: format!("n <= {MAX_EIGEN_N}"),
            got: format!("n = {n}"),
        });
    }
    if n == 0 {
        return Ok((Array1::zeros(0), Array2::zeros((0, 0))));
    }

    let mut a = s.to_owned();
    // Work on the exactly symmetrized copy so rotations stay consistent.
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
    let mut v = Array2::<f64>::eye(n);
    let scale = a.iter().fold(0.0f64, |acc, x| acc.max(x.abs())).max(1.0);
    let stop = tol.max(f64::EPSILON) * scale;

    let mut converged = false;
    let mut last_off = 0.0;
    for _sweep in 0..MAX_SWEEPS {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off = off.max(a[[i, j]].abs());
            }
        }
        last_off = off;
        if off <= stop {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq.abs() <= stop * 1e-3 {
                    continue;
                }
                let app = a[[p, p]];
                let aqq = a[[q, q]];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s_ = t * c;

                for i in 0..n {
                    if i != p && i != q {
                        let aip = a[[i, p]];
                        let aiq = a[[i, q]];
                        a[[i, p]] = c * aip - s_ * aiq;
                        a[[p, i]] = a[[i, p]];
                        a[[i, q]] = s_ * aip + c * aiq;
                        a[[q, i]] = a[[i, q]];
                    }
                }
                a[[p, p]] = c * c * app - 2.0 * s_ * c * apq + s_ * s_ * aqq;
                a[[q, q]] = s_ * s_ * app + 2.0 * s_ * c * apq + c * c * aqq;
                a[[p, q]] = 0.0;
                a[[q, p]] = 0.0;

                for i in 0..n {
                    let vip = v[[i, p]];
                    let viq = v[[i, q]];
                    v[[i, p]] = c * vip - s_ * viq;
                    v[[i, q]] = s_ * vip + c * viq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::EigenNoConvergence { sweeps: MAX_SWEEPS, off: last_off });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[i, i]].total_cmp(&a[[j, j]]));
    let eigenvalues = Array1::from_iter(order.iter().map(|&i| a[[i, i]]));
    let mut eigenvectors = Array2::<f64>::zeros((n, n));
    for (out_col, &src_col) in order.iter().enumerate() {
        for i in 0..n {
            eigenvectors[[i, out_col]] = v[[i, src_col]];
        }
    }
    Ok((eigenvalues, eigenvectors))
}

/// Largest eigenvalue of a symmetric matrix.
pub fn spectral_radius_symmetric(s: &Array2<f64>, tol: f64) -> Result<f64> {
    let (vals, _) = jacobi_eigendecomposition(s, tol)?;
    Ok(vals.iter().fold(0.0f64, |a, &x| a.max(x.abs())))
}

/// A seeded random rotation: the Q factor of a Gaussian matrix, orthonormal
/// columns by modified Gram-Schmidt with deterministic sign convention
/// (first nonzero entry of each column positive).
pub fn random_rotation(dim: usize, rng: &mut SeededRng) -> Array2<f64> {
    let normal = StandardNormal;
    let mut q = Array2::<f64>::zeros((dim, dim));
    for j in 0..dim {
        let mut col: Array1<f64> = Array1::from_iter((0..dim).map(|_| normal.sample(rng)));
        for i in 0..j {
            let qi = q.column(i);
            let proj = qi.dot(&col);
            col.scaled_add(-proj, &qi);
        }
        let norm = col.dot(&col).sqrt();
        if norm < 1e-12 {
            // Degenerate draw; fall back to a basis vector and re-orthogonalize.
            col.fill(0.0);
            col[j % dim] = 1.0;
            for i in 0..j {
                let qi = q.column(i);
                let proj = qi.dot(&col);
                col.scaled_add(-proj, &qi);
            }
        }
        let norm = col.dot(&col).sqrt().max(1e-300);
        col.mapv_inplace(|x| x / norm);
        let sign = col
            .iter()
            .find(|x| x.abs() > 1e-12)
            .map(|x| x.signum())
            .unwrap_or(1.0);
        col.mapv_inplace(|x| x * sign);
        q.column_mut(j).assign(&col);
    }
    q
}

/// Median of a slice; averages the middle pair for even lengths.
/// Returns `None` for empty input.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    if n % 2 == 1 {
        Some(sorted[n / 2])
    } else {
        Some(0.5 * (sorted[n / 2 - 1] + sorted[n / 2]))
    }
}
