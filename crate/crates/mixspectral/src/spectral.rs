//! Spectral embedding of the variable graph.
//!
//! The fitted edge weights are folded into a symmetric nonnegative weight
//! matrix, turned into an unnormalized graph Laplacian `Δ = D − W`, and
//! eigendecomposed. Observations are then mapped through the eigenvector
//! basis: `φ(x) = Φᵀx`, truncated to the leading `l` coordinates in the
//! configured eigenvalue order (ascending by default — smooth directions of
//! the variable graph first).

use ndarray::{Array1, Array2, ArrayView1};
use thiserror::Error;

use crate::linalg;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("dimension mismatch: {detail}")]
    DimensionMismatch { detail: String },
    #[error("weight matrix is not symmetric within {tol}: W[{i},{j}] = {a} vs W[{j},{i}] = {b}")]
    NotSymmetric {
        i: usize,
        j: usize,
        a: f64,
        b: f64,
        tol: f64,
    },
    #[error("weight matrix has negative entry W[{i},{j}] = {value}")]
    NegativeWeight { i: usize, j: usize, value: f64 },
    #[error("eigendecomposition did not converge after {sweeps} sweeps")]
    ConvergenceFailure { sweeps: usize },
    #[error("requested {l} features but the basis has only {p}")]
    FeatureCountOutOfRange { l: usize, p: usize },
}

/// Symmetric, nonnegative, zero-diagonal variable-affinity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    matrix: Array2<f64>,
}

impl WeightMatrix {
    const SYMMETRY_TOL: f64 = 1e-12;

    /// Validate an externally built matrix (square, symmetric within 1e-12,
    /// nonnegative; the diagonal is zeroed).
    pub fn new(matrix: Array2<f64>) -> Result<Self, SpectralError> {
        let (r, c) = matrix.dim();
        if r != c {
            return Err(SpectralError::DimensionMismatch {
                detail: format!("weight matrix must be square, got {r}x{c}"),
            });
        }
        for i in 0..r {
            for j in (i + 1)..r {
                let (a, b) = (matrix[[i, j]], matrix[[j, i]]);
                if (a - b).abs() > Self::SYMMETRY_TOL {
                    return Err(SpectralError::NotSymmetric {
                        i,
                        j,
                        a,
                        b,
                        tol: Self::SYMMETRY_TOL,
                    });
                }
            }
        }
        for ((i, j), &v) in matrix.indexed_iter() {
            if i != j && v < 0.0 {
                return Err(SpectralError::NegativeWeight { i, j, value: v });
            }
        }
        let mut matrix = matrix;
        for i in 0..r {
            matrix[[i, i]] = 0.0;
        }
        Ok(WeightMatrix { matrix })
    }

    pub fn p(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }
}

/// Build a [`WeightMatrix`] from fitted edge weights: scatter θ into a `p×p`
/// matrix over the lexicographic edge set, symmetrize as `(Θ + Θᵀ)/2`, and
/// take absolute values. One θ entry per unordered pair `(s, t)`, `s < t`.
pub fn symmetrize_abs(theta: ArrayView1<f64>, p: usize) -> Result<WeightMatrix, SpectralError> {
    let m = p * (p - 1) / 2;
    if theta.len() != m {
        return Err(SpectralError::DimensionMismatch {
            detail: format!(
                "{} edge weights cannot fill the {m} edges of a {p}-variable graph",
                theta.len()
            ),
        });
    }
    let mut w = Array2::zeros((p, p));
    let mut e = 0;
    for s in 0..p {
        for t in (s + 1)..p {
            // Θ is upper-triangular here, so (Θ + Θᵀ)/2 halves each entry
            // before |·| mirrors it across the diagonal.
            let half = (theta[e] / 2.0).abs();
            w[[s, t]] = half;
            w[[t, s]] = half;
            e += 1;
        }
    }
    WeightMatrix::new(w)
}

/// Same folding for a full `p×p` parameter matrix (no triangular
/// convention assumed): `|(Θ + Θᵀ)/2|` with the diagonal zeroed.
pub fn symmetrize_abs_matrix(theta: &Array2<f64>) -> Result<WeightMatrix, SpectralError> {
    let (r, c) = theta.dim();
    if r != c {
        return Err(SpectralError::DimensionMismatch {
            detail: format!("parameter matrix must be square, got {r}x{c}"),
        });
    }
    let mut w = Array2::zeros((r, r));
    for i in 0..r {
        for j in 0..r {
            w[[i, j]] = ((theta[[i, j]] + theta[[j, i]]) / 2.0).abs();
        }
    }
    WeightMatrix::new(w)
}

/// Unnormalized graph Laplacian `Δ = D − W` with `D = diag(row sums)`.
pub fn laplacian(w: &WeightMatrix) -> Array2<f64> {
    let p = w.p();
    let degrees: Array1<f64> = w.matrix.sum_axis(ndarray::Axis(1));
    let mut lap = -w.matrix.clone();
    for i in 0..p {
        lap[[i, i]] = degrees[i];
    }
    lap
}

/// Eigenvalue/eigenvector pairs of a Laplacian, eigenvalues ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    /// Ascending; the first is 0 for any valid Laplacian (constant vector).
    pub eigenvalues: Vec<f64>,
    /// Column `j` is the unit eigenvector for `eigenvalues[j]`, with its
    /// largest-magnitude entry made positive.
    pub eigenvectors: Array2<f64>,
}

impl SpectralBasis {
    pub fn p(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// Full symmetric eigendecomposition of the Laplacian.
pub fn eigendecompose(lap: &Array2<f64>) -> Result<SpectralBasis, SpectralError> {
    let (r, c) = lap.dim();
    if r != c {
        return Err(SpectralError::DimensionMismatch {
            detail: format!("laplacian must be square, got {r}x{c}"),
        });
    }
    let (eigenvalues, eigenvectors) =
        linalg::jacobi_eigh(lap).map_err(|f| SpectralError::ConvergenceFailure {
            sweeps: f.sweeps,
        })?;
    Ok(SpectralBasis {
        eigenvalues,
        eigenvectors,
    })
}

/// Which end of the spectrum supplies the leading features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EigenvalueOrder {
    #[default]
    Ascending,
    Descending,
}

/// Options for [`transform`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TransformOptions {
    pub order: EigenvalueOrder,
    /// Skip the zero-eigenvalue constant direction(s) before counting `l`
    /// features (ascending order only; a connected graph has exactly one).
    pub drop_constant: bool,
}

/// Map observations through the basis: row `i` of the result is the first
/// `l` coordinates of `Φᵀ·x_i` in the requested spectral order.
pub fn transform(
    data: &Array2<f64>,
    basis: &SpectralBasis,
    l: usize,
    opts: &TransformOptions,
) -> Result<Embedding, SpectralError> {
    let p = basis.p();
    if data.ncols() != p {
        return Err(SpectralError::DimensionMismatch {
            detail: format!(
                "data has {} columns but the basis covers {p} variables",
                data.ncols()
            ),
        });
    }
    let mut order: Vec<usize> = (0..p).collect();
    if opts.order == EigenvalueOrder::Descending {
        order.reverse();
    }
    if opts.drop_constant && opts.order == EigenvalueOrder::Ascending {
        const ZERO_EIG_TOL: f64 = 1e-9;
        let zeros = basis
            .eigenvalues
            .iter()
            .take_while(|&&ev| ev.abs() <= ZERO_EIG_TOL)
            .count();
        order.drain(..zeros);
    }
    if l == 0 || l > order.len() {
        return Err(SpectralError::FeatureCountOutOfRange {
            l,
            p: order.len(),
        });
    }
    order.truncate(l);

    let n = data.nrows();
    let mut coords = Array2::zeros((n, l));
    let mut eigenvalues = Vec::with_capacity(l);
    for (out_j, &j) in order.iter().enumerate() {
        let column = basis.eigenvectors.column(j);
        let proj = data.dot(&column);
        coords.column_mut(out_j).assign(&proj);
        eigenvalues.push(basis.eigenvalues[j]);
    }
    Ok(Embedding {
        coords,
        eigenvalues,
    })
}

/// Observations expressed in spectral coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    /// `n × l`; row `i` holds observation `i`'s spectral features.
    pub coords: Array2<f64>,
    /// Eigenvalue attached to each feature column, in output order.
    pub eigenvalues: Vec<f64>,
}

impl Embedding {
    pub fn n(&self) -> usize {
        self.coords.nrows()
    }

    pub fn l(&self) -> usize {
        self.coords.ncols()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_theta(m: usize, seed: u64) -> Array1<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array1::from_shape_fn(m, |_| rng.gen::<f64>() * 4.0 - 2.0)
    }

    #[test]
    fn symmetrize_abs_folds_sign_and_mirrors() {
        let w = symmetrize_abs(array![-1.0, 0.5, 0.0].view(), 3).unwrap();
        let m = w.matrix();
        assert_abs_diff_eq!(m[[0, 1]], 0.5);
        assert_abs_diff_eq!(m[[1, 0]], 0.5);
        assert_abs_diff_eq!(m[[0, 2]], 0.25);
        assert_abs_diff_eq!(m[[2, 0]], 0.25);
        assert_abs_diff_eq!(m[[1, 2]], 0.0);
        for i in 0..3 {
            assert_eq!(m[[i, i]], 0.0);
        }
    }

    #[test]
    fn symmetrize_matrix_form_matches_edge_vector_form() {
        let p = 5;
        let theta = random_theta(p * (p - 1) / 2, 1);
        let mut full = Array2::zeros((p, p));
        let mut e = 0;
        for s in 0..p {
            for t in (s + 1)..p {
                full[[s, t]] = theta[e];
                e += 1;
            }
        }
        let from_vec = symmetrize_abs(theta.view(), p).unwrap();
        let from_mat = symmetrize_abs_matrix(&full).unwrap();
        assert_eq!(from_vec, from_mat);
    }

    #[test]
    fn wrong_edge_count_is_rejected() {
        let err = symmetrize_abs(Array1::zeros(4).view(), 3).unwrap_err();
        assert!(matches!(err, SpectralError::DimensionMismatch { .. }));
    }

    #[test]
    fn weight_matrix_rejects_asymmetry_and_negatives() {
        let asym = array![[0.0, 1.0], [0.9, 0.0]];
        assert!(matches!(
            WeightMatrix::new(asym).unwrap_err(),
            SpectralError::NotSymmetric { .. }
        ));
        let neg = array![[0.0, -1.0], [-1.0, 0.0]];
        assert!(matches!(
            WeightMatrix::new(neg).unwrap_err(),
            SpectralError::NegativeWeight { .. }
        ));
    }

    #[test]
    fn two_node_laplacian_closed_form() {
        let w = symmetrize_abs(array![1.0].view(), 2).unwrap();
        let lap = laplacian(&w);
        // |1.0| / 2 = 0.5 off-diagonal weight
        assert_abs_diff_eq!(lap[[0, 0]], 0.5);
        assert_abs_diff_eq!(lap[[0, 1]], -0.5);
        let basis = eigendecompose(&lap).unwrap();
        assert_abs_diff_eq!(basis.eigenvalues[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(basis.eigenvalues[1], 1.0, epsilon = 1e-12);
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(basis.eigenvectors[[0, 0]], inv_sqrt2, epsilon = 1e-12);
        assert_abs_diff_eq!(basis.eigenvectors[[1, 0]], inv_sqrt2, epsilon = 1e-12);
        assert_abs_diff_eq!(basis.eigenvectors[[0, 1]].abs(), inv_sqrt2, epsilon = 1e-12);
        assert_abs_diff_eq!(
            basis.eigenvectors[[0, 1]] + basis.eigenvectors[[1, 1]],
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn complete_graph_spectrum() {
        // K3 with unit weights: eigenvalues 0, 3, 3
        let w = WeightMatrix::new(Array2::from_elem((3, 3), 1.0)).unwrap();
        let basis = eigendecompose(&laplacian(&w)).unwrap();
        let evs = &basis.eigenvalues;
        assert_abs_diff_eq!(evs[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(evs[1], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(evs[2], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn laplacian_rows_sum_to_zero_and_reconstruction_holds() {
        for seed in 0..10 {
            let p = 6;
            let theta = random_theta(p * (p - 1) / 2, seed);
            let w = symmetrize_abs(theta.view(), p).unwrap();
            let lap = laplacian(&w);
            for i in 0..p {
                let row_sum: f64 = lap.row(i).sum();
                assert_abs_diff_eq!(row_sum, 0.0, epsilon = 1e-12);
            }
            let basis = eigendecompose(&lap).unwrap();
            // Φ diag(λ) Φᵀ = Δ
            let mut rebuilt = Array2::<f64>::zeros((p, p));
            for j in 0..p {
                let col = basis.eigenvectors.column(j);
                for a in 0..p {
                    for b in 0..p {
                        rebuilt[[a, b]] += basis.eigenvalues[j] * col[a] * col[b];
                    }
                }
            }
            for (idx, (&x, &y)) in rebuilt.iter().zip(lap.iter()).enumerate() {
                assert!(
                    (x - y).abs() <= 1e-8,
                    "seed {seed}, entry {idx}: {x} vs {y}"
                );
            }
        }
    }

    #[test]
    fn disconnected_components_show_up_as_zero_eigenvalues() {
        // two components: {0,1} joined, {2,3} joined, nothing across
        let mut w = Array2::zeros((4, 4));
        w[[0, 1]] = 1.0;
        w[[1, 0]] = 1.0;
        w[[2, 3]] = 2.0;
        w[[3, 2]] = 2.0;
        let basis = eigendecompose(&laplacian(&WeightMatrix::new(w).unwrap())).unwrap();
        let zeros = basis
            .eigenvalues
            .iter()
            .filter(|&&ev| ev.abs() < 1e-10)
            .count();
        assert_eq!(zeros, 2);
    }

    #[test]
    fn transform_projects_onto_leading_eigenvectors() {
        let w = symmetrize_abs(array![1.0].view(), 2).unwrap();
        let basis = eigendecompose(&laplacian(&w)).unwrap();
        let data = array![[1.0, -1.0]];
        let emb = transform(&data, &basis, 2, &TransformOptions::default()).unwrap();
        // x = (1, -1) is orthogonal to the constant eigenvector and aligned
        // (up to sign) with the second, so φ(x) = (0, ±√2)
        assert_abs_diff_eq!(emb.coords[[0, 0]], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(emb.coords[[0, 1]].abs(), 2f64.sqrt(), epsilon = 1e-12);
        assert_eq!(emb.eigenvalues, vec![0.0, 1.0]);
    }

    #[test]
    fn full_transform_is_an_isometry() {
        let p = 5;
        let theta = random_theta(p * (p - 1) / 2, 9);
        let basis = eigendecompose(&laplacian(&symmetrize_abs(theta.view(), p).unwrap())).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let data = Array2::from_shape_fn((7, p), |_| rng.gen::<f64>() * 2.0 - 1.0);
        let emb = transform(&data, &basis, p, &TransformOptions::default()).unwrap();
        for i in 0..7 {
            let orig: f64 = data.row(i).iter().map(|x| x * x).sum();
            let mapped: f64 = emb.coords.row(i).iter().map(|x| x * x).sum();
            assert_abs_diff_eq!(orig, mapped, epsilon = 1e-9);
        }
    }

    #[test]
    fn descending_order_reverses_feature_columns() {
        let p = 4;
        let theta = random_theta(p * (p - 1) / 2, 11);
        let basis = eigendecompose(&laplacian(&symmetrize_abs(theta.view(), p).unwrap())).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let data = Array2::from_shape_fn((3, p), |_| rng.gen::<f64>());
        let asc = transform(&data, &basis, p, &TransformOptions::default()).unwrap();
        let desc = transform(
            &data,
            &basis,
            p,
            &TransformOptions {
                order: EigenvalueOrder::Descending,
                drop_constant: false,
            },
        )
        .unwrap();
        for j in 0..p {
            assert_eq!(asc.eigenvalues[j], desc.eigenvalues[p - 1 - j]);
            for i in 0..3 {
                assert_eq!(asc.coords[[i, j]], desc.coords[[i, p - 1 - j]]);
            }
        }
    }

    #[test]
    fn drop_constant_skips_the_zero_eigenvector() {
        let p = 3;
        let w = WeightMatrix::new(Array2::from_elem((p, p), 1.0)).unwrap();
        let basis = eigendecompose(&laplacian(&w)).unwrap();
        let data = array![[0.3, -0.1, 0.8]];
        let dropped = transform(
            &data,
            &basis,
            2,
            &TransformOptions {
                order: EigenvalueOrder::Ascending,
                drop_constant: true,
            },
        )
        .unwrap();
        let full = transform(&data, &basis, 3, &TransformOptions::default()).unwrap();
        assert_eq!(dropped.eigenvalues.as_slice(), &full.eigenvalues[1..]);
        for j in 0..2 {
            assert_eq!(dropped.coords[[0, j]], full.coords[[0, j + 1]]);
        }
    }

    #[test]
    fn out_of_range_feature_counts_are_rejected() {
        let w = symmetrize_abs(array![1.0].view(), 2).unwrap();
        let basis = eigendecompose(&laplacian(&w)).unwrap();
        let data = array![[1.0, 2.0]];
        for l in [0, 3] {
            let err = transform(&data, &basis, l, &TransformOptions::default()).unwrap_err();
            assert!(matches!(err, SpectralError::FeatureCountOutOfRange { .. }));
        }
    }
}
