//! Small dense symmetric-matrix helpers shared by the spectral, clustering,
//! and metrics modules.
//!
//! The variable graphs this crate works with have at most a few hundred
//! vertices, so a classical cyclic Jacobi eigensolver is plenty: it is
//! simple, dependency-free, numerically robust on symmetric input, and —
//! unlike threaded LAPACK backends — bitwise deterministic.

use ndarray::Array2;

/// Eigensolver failure: the off-diagonal mass did not fall below the
/// convergence threshold within the sweep budget.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct JacobiFailure {
    pub sweeps: usize,
}

/// Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvalues sorted ascending
/// and `eigenvectors` column `j` paired with eigenvalue `j`. Every
/// eigenvector is put in a canonical sign: its largest-magnitude entry is
/// made positive, ties broken by the lowest index, so repeated runs (and
/// different but equivalent inputs) produce identical bases outside of
/// degenerate eigenvalue blocks.
///
/// The input must be square and symmetric; symmetry is only debug-asserted
/// because every caller constructs it symmetrically by definition.
pub(crate) fn jacobi_eigh(a: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>), JacobiFailure> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols(), "jacobi_eigh needs a square matrix");
    debug_assert!(is_symmetric(a, 1e-12), "jacobi_eigh needs symmetric input");

    if n == 0 {
        return Ok((Vec::new(), Array2::zeros((0, 0))));
    }

    let mut d = a.clone();
    let mut v = Array2::<f64>::eye(n);
    let scale = frobenius(a).max(f64::MIN_POSITIVE);
    let tol = 1e-14 * scale;

    const MAX_SWEEPS: usize = 64;
    for sweep in 0..MAX_SWEEPS {
        if off_diagonal_norm(&d) <= tol {
            let _ = sweep;
            return Ok(sorted_with_sign_convention(&d, v));
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = d[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                // Standard stable rotation: t = sign(theta)/(|theta| + sqrt(theta^2+1)).
                let theta = (d[[q, q]] - d[[p, p]]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                let dpp = d[[p, p]];
                let dqq = d[[q, q]];
                d[[p, p]] = dpp - t * apq;
                d[[q, q]] = dqq + t * apq;
                d[[p, q]] = 0.0;
                d[[q, p]] = 0.0;
                for i in 0..n {
                    if i != p && i != q {
                        let dip = d[[i, p]];
                        let diq = d[[i, q]];
                        d[[i, p]] = c * dip - s * diq;
                        d[[p, i]] = d[[i, p]];
                        d[[i, q]] = s * dip + c * diq;
                        d[[q, i]] = d[[i, q]];
                    }
                }
                for i in 0..n {
                    let vip = v[[i, p]];
                    let viq = v[[i, q]];
                    v[[i, p]] = c * vip - s * viq;
                    v[[i, q]] = s * vip + c * viq;
                }
            }
        }
    }

    if off_diagonal_norm(&d) <= tol {
        return Ok(sorted_with_sign_convention(&d, v));
    }
    Err(JacobiFailure { sweeps: MAX_SWEEPS })
}

fn sorted_with_sign_convention(d: &Array2<f64>, v: Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = d.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[[i, i]].partial_cmp(&d[[j, j]]).expect("finite eigenvalues"));

    let eigenvalues: Vec<f64> = order.iter().map(|&i| d[[i, i]]).collect();
    let mut vectors = Array2::<f64>::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        let mut flip = false;
        let mut best = f64::NEG_INFINITY;
        for i in 0..n {
            let mag = v[[i, src]].abs();
            if mag > best {
                best = mag;
                flip = v[[i, src]] < 0.0;
            }
        }
        let sign = if flip { -1.0 } else { 1.0 };
        for i in 0..n {
            vectors[[i, dst]] = sign * v[[i, src]];
        }
    }
    (eigenvalues, vectors)
}

pub(crate) fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn off_diagonal_norm(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += a[[i, j]] * a[[i, j]];
            }
        }
    }
    sum.sqrt()
}

pub(crate) fn is_symmetric(a: &Array2<f64>, tol: f64) -> bool {
    let n = a.nrows();
    if n != a.ncols() {
        return false;
    }
    for i in 0..n {
        for j in i + 1..n {
            if (a[[i, j]] - a[[j, i]]).abs() > tol {
                return false;
            }
        }
    }
    true
}

/// Sample covariance matrix (divisor `n - 1`) of row-observations.
pub(crate) fn sample_covariance(points: &Array2<f64>) -> Array2<f64> {
    let n = points.nrows();
    let d = points.ncols();
    assert!(n >= 2, "covariance needs at least two observations");
    let mean = points.mean_axis(ndarray::Axis(0)).expect("n >= 2");
    let mut cov = Array2::<f64>::zeros((d, d));
    for row in points.rows() {
        for a in 0..d {
            let da = row[a] - mean[a];
            for b in a..d {
                cov[[a, b]] += da * (row[b] - mean[b]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for a in 0..d {
        for b in a..d {
            cov[[a, b]] /= denom;
            cov[[b, a]] = cov[[a, b]];
        }
    }
    cov
}
