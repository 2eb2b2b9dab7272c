//! Collective nonnegative factorization of the two feature blocks through a
//! shared factor, and the dense continuous maps derived from it.
//!
//! Both blocks are approximated with one observation factor `W`:
//! `D_num ≈ W·H1` and `D_cat ≈ W·H2`, all three factors constrained
//! nonnegative and the latent dimension `k` strictly below `p1 + p2`. The
//! reconstructions `W·H1` and `W·H2`, rescaled column-wise into
//! `[-beta, beta]`, are the *dense maps*: continuous surrogate values for
//! every variable — in particular for the ±1 categorical columns, which is
//! what makes mixed numerical/categorical similarity comparisons possible
//! downstream.
//!
//! Two objective conventions appear here deliberately:
//!
//! * [`objective`] — the reported quantity, a sum of two *unsquared*
//!   Frobenius norms.
//! * [`surrogate_objective`] / [`surrogate_gradient`] — the sum of *squared*
//!   norms actually optimized, which is smooth at zero residual. SGD steps
//!   descend the surrogate; the projection step (clamp at zero) maintains
//!   the nonnegativity constraints.
//!
//! Both blocks are recoded to a nonnegative presentation before
//! factorizing, because nonnegative factors can never reconstruct negative
//! entries: the ±1 categorical block becomes {0, 1} and the `[-beta, beta]`
//! numerical block maps affinely onto `[0, 1]` (which is exactly the
//! min-max normalization of the raw column — the recode and the original
//! scaling compose to it). Skipping the numerical recode is not an option
//! in practice: a column whose scaled values are mostly negative (any
//! right-skewed variable) would have an all-zero best nonnegative fit,
//! i.e. a degenerate constant reconstruction. The dense map is re-centered
//! onto `[-beta, beta]` afterwards anyway, so the recodes change nothing
//! downstream.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::MixedDataMatrix;

#[derive(Debug, Error)]
pub enum FactorizationError {
    #[error("latent dimension k={k} must satisfy 1 <= k < p1+p2 = {p}")]
    InvalidLatentDim { k: usize, p: usize },
    #[error("non-finite loss at epoch {epoch}; the learning rate is too large")]
    NonFiniteLoss { epoch: usize },
    #[error("dimension mismatch: {detail}")]
    DimensionMismatch { detail: String },
    #[error("reconstructed {block} column {column} is constant; factorization is degenerate")]
    ConstantColumn { block: &'static str, column: usize },
}

/// Nonnegative factors of the collective factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    /// n×k observation factor shared by both blocks.
    pub w: Array2<f64>,
    /// k×p1 numerical-block factor.
    pub h1: Array2<f64>,
    /// k×p2 categorical-block factor.
    pub h2: Array2<f64>,
    pub k: usize,
}

/// Column-rescaled reconstructions of both blocks; every entry lies in
/// `[-beta, beta]`.
#[derive(Debug, Clone)]
pub struct DenseMaps {
    pub xhat_num: Array2<f64>,
    pub xhat_cat: Array2<f64>,
    pub beta: f64,
}

impl DenseMaps {
    /// Dense-map value of variable `var` (numerical-first indexing) for row `i`.
    pub fn value(&self, i: usize, var: usize) -> f64 {
        let p1 = self.xhat_num.ncols();
        if var < p1 {
            self.xhat_num[[i, var]]
        } else {
            self.xhat_cat[[i, var - p1]]
        }
    }
}

/// SGD hyperparameters for [`factorize`].
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizeConfig {
    pub k: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Initial entries are drawn i.i.d. uniform on `(0, init_scale]`;
    /// strictly positive so no unit starts dead under the projection.
    pub init_scale: f64,
}

impl FactorizeConfig {
    /// Defaults for everything but the latent dimension.
    pub fn with_k(k: usize) -> Self {
        FactorizeConfig {
            k,
            learning_rate: 0.005,
            epochs: 200,
            seed: 17,
            init_scale: 0.1,
        }
    }
}

/// Recode the ±1 categorical block to {0, 1} for factorization.
fn cat01(data: &MixedDataMatrix) -> Array2<f64> {
    data.cat_block.mapv(|x| (x + 1.0) / 2.0)
}

/// Recode the `[-beta, beta]` numerical block to `[0, 1]` for factorization.
fn num01(data: &MixedDataMatrix) -> Array2<f64> {
    let beta = data.beta;
    data.num_block.mapv(|x| (x + beta) / (2.0 * beta))
}

fn check_dims(model: &FactorModel, data: &MixedDataMatrix) -> Result<(), FactorizationError> {
    let (n, p1, p2) = (data.n(), data.p1(), data.p2());
    let ok = model.w.nrows() == n
        && model.w.ncols() == model.k
        && model.h1.nrows() == model.k
        && model.h1.ncols() == p1
        && model.h2.nrows() == model.k
        && model.h2.ncols() == p2;
    if ok {
        Ok(())
    } else {
        Err(FactorizationError::DimensionMismatch {
            detail: format!(
                "model (W {}x{}, H1 {}x{}, H2 {}x{}, k={}) vs data (n={n}, p1={p1}, p2={p2})",
                model.w.nrows(),
                model.w.ncols(),
                model.h1.nrows(),
                model.h1.ncols(),
                model.h2.nrows(),
                model.h2.ncols(),
                model.k,
            ),
        })
    }
}

/// The reported objective: `||D_num01 − W·H1||_F + ||D_cat01 − W·H2||_F`
/// (unsquared norms, both blocks in their nonnegative [0,1] presentation).
pub fn objective(model: &FactorModel, data: &MixedDataMatrix) -> Result<f64, FactorizationError> {
    check_dims(model, data)?;
    let r1 = &model.w.dot(&model.h1) - &num01(data);
    let r2 = &model.w.dot(&model.h2) - &cat01(data);
    Ok(crate::linalg::frobenius(&r1) + crate::linalg::frobenius(&r2))
}

/// The smooth surrogate actually minimized:
/// `||D_num01 − W·H1||_F^2 + ||D_cat01 − W·H2||_F^2`.
pub fn surrogate_objective(
    model: &FactorModel,
    data: &MixedDataMatrix,
) -> Result<f64, FactorizationError> {
    check_dims(model, data)?;
    let r1 = &model.w.dot(&model.h1) - &num01(data);
    let r2 = &model.w.dot(&model.h2) - &cat01(data);
    Ok(r1.iter().map(|x| x * x).sum::<f64>() + r2.iter().map(|x| x * x).sum::<f64>())
}

/// Full-batch gradient of [`surrogate_objective`] with respect to
/// `(W, H1, H2)`.
pub fn surrogate_gradient(
    model: &FactorModel,
    data: &MixedDataMatrix,
) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>), FactorizationError> {
    check_dims(model, data)?;
    let r1 = &model.w.dot(&model.h1) - &num01(data);
    let r2 = &model.w.dot(&model.h2) - &cat01(data);
    let grad_w = 2.0 * (r1.dot(&model.h1.t()) + r2.dot(&model.h2.t()));
    let grad_h1 = 2.0 * model.w.t().dot(&r1);
    let grad_h2 = 2.0 * model.w.t().dot(&r2);
    Ok((grad_w, grad_h1, grad_h2))
}

/// Projected stochastic gradient descent on the squared-norm surrogate.
///
/// One epoch visits every observation row once in a seed-determined random
/// order; each visit updates the row's slice of `W` and all of `H1`, `H2`
/// from that row's residual, then clamps negatives to zero. Deterministic
/// for a fixed config.
pub fn factorize(
    data: &MixedDataMatrix,
    config: &FactorizeConfig,
) -> Result<FactorModel, FactorizationError> {
    let (n, p1, p2) = (data.n(), data.p1(), data.p2());
    let p = p1 + p2;
    if config.k < 1 || config.k >= p {
        return Err(FactorizationError::InvalidLatentDim { k: config.k, p });
    }
    let k = config.k;
    let lr = config.learning_rate;
    let d1 = num01(data);
    let d2 = cat01(data);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    // uniform on (0, init_scale]: 1 - U[0,1) is in (0, 1]
    let mut init = |shape: (usize, usize)| {
        let mut m = Array2::<f64>::zeros(shape);
        for x in m.iter_mut() {
            *x = config.init_scale * (1.0 - rng.gen::<f64>());
        }
        m
    };
    let mut w = init((n, k));
    let mut h1 = init((k, p1));
    let mut h2 = init((k, p2));

    let mut order: Vec<usize> = (0..n).collect();
    let mut r1 = Array1::<f64>::zeros(p1);
    let mut r2 = Array1::<f64>::zeros(p2);
    let mut grad_w = Array1::<f64>::zeros(k);

    for epoch in 0..config.epochs {
        // Fisher-Yates from the run RNG: the visit order is part of the seed
        // contract.
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for &i in &order {
            let w_i = w.row(i);
            // residuals of this row under the current factors
            for b in 0..p1 {
                let mut acc = 0.0;
                for a in 0..k {
                    acc += w_i[a] * h1[[a, b]];
                }
                r1[b] = acc - d1[[i, b]];
            }
            for b in 0..p2 {
                let mut acc = 0.0;
                for a in 0..k {
                    acc += w_i[a] * h2[[a, b]];
                }
                r2[b] = acc - d2[[i, b]];
            }
            for a in 0..k {
                let mut acc = 0.0;
                for b in 0..p1 {
                    acc += r1[b] * h1[[a, b]];
                }
                for b in 0..p2 {
                    acc += r2[b] * h2[[a, b]];
                }
                grad_w[a] = 2.0 * acc;
            }
            // simultaneous update of W's row and both H factors, then project
            for a in 0..k {
                let wa = w[[i, a]];
                for b in 0..p1 {
                    h1[[a, b]] = (h1[[a, b]] - lr * 2.0 * wa * r1[b]).max(0.0);
                }
                for b in 0..p2 {
                    h2[[a, b]] = (h2[[a, b]] - lr * 2.0 * wa * r2[b]).max(0.0);
                }
                w[[i, a]] = (wa - lr * grad_w[a]).max(0.0);
            }
        }
        let finite = w.iter().all(|x| x.is_finite())
            && h1.iter().all(|x| x.is_finite())
            && h2.iter().all(|x| x.is_finite());
        if !finite {
            return Err(FactorizationError::NonFiniteLoss { epoch });
        }
    }

    Ok(FactorModel { w, h1, h2, k })
}

/// Reconstruct both blocks and min-max rescale every column onto
/// `[-beta, beta]`, mirroring the raw-data scaling step.
pub fn dense_maps(model: &FactorModel, beta: f64) -> Result<DenseMaps, FactorizationError> {
    let rescale = |recon: Array2<f64>, block: &'static str| {
        let mut out = recon;
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !(max > min) {
                return Err(FactorizationError::ConstantColumn { block, column: j });
            }
            let range = max - min;
            col.mapv_inplace(|x| 2.0 * beta * ((x - min) / range) - beta);
        }
        Ok(out)
    };
    Ok(DenseMaps {
        xhat_num: rescale(model.w.dot(&model.h1), "numerical")?,
        xhat_cat: rescale(model.w.dot(&model.h2), "categorical")?,
        beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    /// Assemble a MixedDataMatrix directly (bypassing CSV ingestion).
    fn data_from_blocks(num: Array2<f64>, cat: Array2<f64>) -> MixedDataMatrix {
        let names = (0..num.ncols())
            .map(|j| format!("n{j}"))
            .chain((0..cat.ncols()).map(|j| format!("c{j}")))
            .collect();
        let cat_group_sizes = vec![1; cat.ncols()];
        MixedDataMatrix {
            num_block: num,
            cat_block: cat,
            column_names: names,
            cat_group_sizes,
            labels: None,
            beta: 1.0,
        }
    }

    fn random_data(n: usize, p1: usize, p2: usize, seed: u64) -> MixedDataMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let num = Array2::from_shape_fn((n, p1), |_| rng.gen::<f64>() * 2.0 - 1.0);
        let cat = Array2::from_shape_fn((n, p2), |_| if rng.gen::<bool>() { 1.0 } else { -1.0 });
        data_from_blocks(num, cat)
    }

    fn random_model(n: usize, k: usize, p1: usize, p2: usize, seed: u64) -> FactorModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FactorModel {
            w: Array2::from_shape_fn((n, k), |_| rng.gen::<f64>()),
            h1: Array2::from_shape_fn((k, p1), |_| rng.gen::<f64>()),
            h2: Array2::from_shape_fn((k, p2), |_| rng.gen::<f64>()),
            k,
        }
    }

    #[test]
    fn objective_is_zero_for_zero_model_on_zero_data() {
        // both recodings of an all-(-1) block (beta = 1) are all 0, so zero
        // factors reconstruct exactly
        let data = data_from_blocks(
            Array2::from_elem((3, 2), -1.0),
            Array2::from_elem((3, 2), -1.0),
        );
        let model = FactorModel {
            w: Array2::zeros((3, 2)),
            h1: Array2::zeros((2, 2)),
            h2: Array2::zeros((2, 2)),
            k: 2,
        };
        assert_eq!(objective(&model, &data).unwrap(), 0.0);
    }

    #[test]
    fn objective_is_zero_on_exact_rank_k_data() {
        let model = random_model(6, 2, 3, 2, 5);
        // build a data matrix whose [0,1] recodings equal the reconstructions:
        // block = 2*target - 1 inverts the recode for beta = 1
        let num = model.w.dot(&model.h1).mapv(|x| 2.0 * x - 1.0);
        let cat = model.w.dot(&model.h2).mapv(|x| 2.0 * x - 1.0);
        let data = data_from_blocks(num, cat);
        assert_abs_diff_eq!(objective(&model, &data).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn objective_matches_elementwise_oracle() {
        let data = random_data(5, 3, 4, 11);
        let model = random_model(5, 2, 3, 4, 12);
        // brute-force double loops over both residual matrices
        let mut sq1 = 0.0;
        for i in 0..5 {
            for b in 0..3 {
                let mut acc = 0.0;
                for a in 0..2 {
                    acc += model.w[[i, a]] * model.h1[[a, b]];
                }
                let r = acc - (data.num_block[[i, b]] + 1.0) / 2.0;
                sq1 += r * r;
            }
        }
        let mut sq2 = 0.0;
        for i in 0..5 {
            for b in 0..4 {
                let mut acc = 0.0;
                for a in 0..2 {
                    acc += model.w[[i, a]] * model.h2[[a, b]];
                }
                let r = acc - (data.cat_block[[i, b]] + 1.0) / 2.0;
                sq2 += r * r;
            }
        }
        let expected = sq1.sqrt() + sq2.sqrt();
        assert_abs_diff_eq!(objective(&model, &data).unwrap(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(
            surrogate_objective(&model, &data).unwrap(),
            sq1 + sq2,
            epsilon = 1e-12
        );
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        let data = random_data(4, 3, 3, 21);
        let model = random_model(4, 2, 3, 3, 22);
        let (gw, gh1, gh2) = surrogate_gradient(&model, &data).unwrap();
        let h = 1e-6;
        let fd = |perturb: &dyn Fn(&mut FactorModel, f64)| {
            let mut plus = model.clone();
            perturb(&mut plus, h);
            let mut minus = model.clone();
            perturb(&mut minus, -h);
            (surrogate_objective(&plus, &data).unwrap()
                - surrogate_objective(&minus, &data).unwrap())
                / (2.0 * h)
        };
        for idx in [(0usize, 0usize), (2, 1), (3, 0)] {
            let num = fd(&|m: &mut FactorModel, eps: f64| m.w[[idx.0, idx.1]] += eps);
            let rel = (num - gw[idx]).abs() / gw[idx].abs().max(1e-8);
            assert!(rel < 1e-5, "W gradient at {idx:?}: fd {num} vs analytic {}", gw[idx]);
        }
        for idx in [(0usize, 0usize), (1, 2)] {
            let num = fd(&|m: &mut FactorModel, eps: f64| m.h1[[idx.0, idx.1]] += eps);
            let rel = (num - gh1[idx]).abs() / gh1[idx].abs().max(1e-8);
            assert!(rel < 1e-5, "H1 gradient at {idx:?}");
            let num = fd(&|m: &mut FactorModel, eps: f64| m.h2[[idx.0, idx.1]] += eps);
            let rel = (num - gh2[idx]).abs() / gh2[idx].abs().max(1e-8);
            assert!(rel < 1e-5, "H2 gradient at {idx:?}");
        }
    }

    #[test]
    fn invalid_latent_dims_are_rejected() {
        let data = random_data(6, 2, 3, 31);
        for k in [0, 5, 6, 7] {
            let err = factorize(&data, &FactorizeConfig::with_k(k)).unwrap_err();
            assert!(
                matches!(err, FactorizationError::InvalidLatentDim { .. }),
                "k={k} gave {err:?}"
            );
        }
        assert!(factorize(&data, &FactorizeConfig::with_k(4)).is_ok());
    }

    #[test]
    fn recovers_exact_rank_one_structure() {
        // data constructed so both [0,1] recodings are exactly rank-1
        let w_true = array![[0.4], [0.8], [1.2], [0.2], [1.0], [0.6], [0.9], [0.3], [1.1], [0.7]];
        let h1_true = array![[0.5, 1.0]];
        let h2_true = array![[0.9, 0.3]];
        let num = w_true.dot(&h1_true).mapv(|x| 2.0 * x - 1.0);
        let cat = w_true.dot(&h2_true).mapv(|x| 2.0 * x - 1.0);
        let data = data_from_blocks(num, cat);
        let mut cfg = FactorizeConfig::with_k(1);
        cfg.epochs = 500;
        cfg.learning_rate = 0.02;
        let model = factorize(&data, &cfg).unwrap();
        let final_obj = objective(&model, &data).unwrap();
        assert!(final_obj < 1e-2, "rank-1 objective should vanish, got {final_obj}");
    }

    #[test]
    fn nonnegativity_holds_after_every_epoch() {
        // Same seed means epochs=j is a prefix of epochs=j+1, so checking the
        // factors after every epoch count covers every intermediate state.
        let data = random_data(8, 3, 4, 41);
        for epochs in 1..=8 {
            let mut cfg = FactorizeConfig::with_k(3);
            cfg.epochs = epochs;
            cfg.seed = 99;
            let model = factorize(&data, &cfg).unwrap();
            let min = model
                .w
                .iter()
                .chain(model.h1.iter())
                .chain(model.h2.iter())
                .cloned()
                .fold(f64::INFINITY, f64::min);
            assert!(min >= 0.0, "negative entry after {epochs} epochs: {min}");
        }
    }

    #[test]
    fn sgd_improves_on_the_initialization() {
        let data = random_data(12, 4, 5, 51);
        for seed in 0..5 {
            let mut cfg = FactorizeConfig::with_k(4);
            cfg.seed = seed;
            // the initial factors are what epoch count 0 would return; rebuild
            // them by running zero epochs
            let mut cfg0 = cfg.clone();
            cfg0.epochs = 0;
            let init = factorize(&data, &cfg0).unwrap();
            let fitted = factorize(&data, &cfg).unwrap();
            let before = objective(&init, &data).unwrap();
            let after = objective(&fitted, &data).unwrap();
            assert!(
                after <= before,
                "seed {seed}: objective went {before} -> {after}"
            );
        }
    }

    #[test]
    fn factorize_is_deterministic_per_seed() {
        let data = random_data(7, 2, 3, 61);
        let cfg = FactorizeConfig::with_k(2);
        let a = factorize(&data, &cfg).unwrap();
        let b = factorize(&data, &cfg).unwrap();
        assert_eq!(a, b, "same seed must reproduce bitwise-identical factors");
        let mut other = cfg.clone();
        other.seed += 1;
        let c = factorize(&data, &other).unwrap();
        assert_ne!(a, c, "different seeds should explore different factors");
    }

    #[test]
    fn dense_maps_stay_within_beta_bounds() {
        let model = random_model(9, 3, 4, 5, 71);
        let maps = dense_maps(&model, 1.0).unwrap();
        for x in maps.xhat_num.iter().chain(maps.xhat_cat.iter()) {
            assert!((-1.0..=1.0).contains(x), "entry {x} outside [-1, 1]");
        }
        for col in maps.xhat_num.columns() {
            let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_abs_diff_eq!(min, -1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(max, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn dense_maps_rank_one_two_point_column() {
        // W column (1,2)^T with H1 = (1): reconstruction (1,2) maps to (-b, +b)
        let model = FactorModel {
            w: array![[1.0], [2.0]],
            h1: array![[1.0]],
            h2: array![[1.0, 0.5]],
            k: 1,
        };
        let maps = dense_maps(&model, 1.5).unwrap();
        assert_abs_diff_eq!(maps.xhat_num[[0, 0]], -1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(maps.xhat_num[[1, 0]], 1.5, epsilon = 1e-12);
    }

    #[test]
    fn dense_maps_zero_row_lands_at_column_minimum_image() {
        // W has a zero row; reconstruction row is 0, the smallest value in
        // each column, so the scaled map must place it at -beta.
        let model = FactorModel {
            w: array![[0.0], [1.0], [2.0]],
            h1: array![[1.0, 2.0]],
            h2: array![[0.7]],
            k: 1,
        };
        let maps = dense_maps(&model, 1.0).unwrap();
        assert_abs_diff_eq!(maps.xhat_num[[0, 0]], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(maps.xhat_num[[0, 1]], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(maps.xhat_cat[[0, 0]], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn dense_maps_reject_constant_reconstruction() {
        let model = FactorModel {
            w: Array2::zeros((3, 1)),
            h1: array![[1.0]],
            h2: array![[1.0]],
            k: 1,
        };
        let err = dense_maps(&model, 1.0).unwrap_err();
        assert!(matches!(err, FactorizationError::ConstantColumn { .. }), "got {err:?}");
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let data = random_data(5, 2, 2, 81);
        let model = random_model(4, 2, 2, 2, 82);
        let err = objective(&model, &data).unwrap_err();
        assert!(matches!(err, FactorizationError::DimensionMismatch { .. }), "got {err:?}");
    }
}
