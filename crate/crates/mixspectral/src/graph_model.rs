//! Edge-weight estimation for the pairwise exponential-family model over
//! variables.
//!
//! The model assigns each observation a score `s_i = Σ_e θ_e·h_ie` — the
//! θ-weighted sum of its per-edge similarities — and the parameters are
//! estimated by maximizing a pseudo log-likelihood in which the normalizer
//! is the *empirical* sum `Z(θ) = Σ_i exp(s_i)` over the observed sample
//! (not the intractable partition function over the full state space):
//!
//! ```text
//! logL(θ) = Σ_i s_i − n·log Σ_i exp(s_i)
//! ```
//!
//! Two structural facts shape the optimizer:
//!
//! * `θ = 0` makes every score equal, and equal scores are a stationary
//!   point — the gradient there is exactly zero. Fitting therefore starts
//!   from a *random* point with small scale `σ0`, never from zero.
//! * The objective only depends on score differences, so any θ direction
//!   that shifts all scores equally (e.g. an edge whose similarity column
//!   is constant) is flat: its gradient component vanishes identically and
//!   the fitted coordinate stays at its initialization.
//!
//! Maximization is plain gradient ascent with an optional backtracking line
//! search that halves the step while the objective would decrease; with
//! backtracking on, the likelihood trace is non-decreasing by construction.

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::similarity::SimilarityTensor;

#[derive(Debug, Error)]
pub enum GraphModelError {
    #[error("dimension mismatch: {detail}")]
    DimensionMismatch { detail: String },
    #[error("non-finite likelihood at iteration {iter}; the learning rate is too large")]
    NonFiniteLikelihood { iter: usize },
    #[error("need at least 2 observations to fit edge weights, got {n}")]
    DegenerateInput { n: usize },
}

/// Hyperparameters for [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Base ascent step; backtracking may shrink (and cautiously re-grow)
    /// the accepted step around it.
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Stop once the gradient's infinity norm falls below this.
    pub tolerance: f64,
    /// Scale of the random zero-mean initialization (σ0).
    pub init_scale: f64,
    pub seed: u64,
    /// Optional L2 penalty coefficient; 0 disables it. A small positive
    /// value pins down coordinates the likelihood leaves flat.
    pub l2: f64,
    /// Halve the step while the objective would decrease (≤ 20 halvings);
    /// guarantees a non-decreasing likelihood trace.
    pub backtracking: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            learning_rate: 1e-3,
            max_iters: 2000,
            tolerance: 1e-5,
            init_scale: 0.01,
            seed: 23,
            l2: 0.0,
            backtracking: true,
        }
    }
}

/// Per-iteration record of a [`fit`] run.
#[derive(Debug, Clone, PartialEq)]
pub struct FitTrace {
    /// Pseudo log-likelihood of the iterate at the *start* of each
    /// iteration (so entry 0 belongs to the initialization).
    pub log_likelihood: Vec<f64>,
    /// Gradient infinity norm at the same points.
    pub grad_norm: Vec<f64>,
    /// The random starting point, kept so flat (untouched) coordinates can
    /// be identified after the fact.
    pub initial_theta: Array1<f64>,
}

impl FitTrace {
    pub fn iterations(&self) -> usize {
        self.log_likelihood.len()
    }
}

fn check_theta(theta: &Array1<f64>, h: &SimilarityTensor) -> Result<(), GraphModelError> {
    if theta.len() != h.m() {
        return Err(GraphModelError::DimensionMismatch {
            detail: format!(
                "theta has {} entries, tensor has {} edges",
                theta.len(),
                h.m()
            ),
        });
    }
    Ok(())
}

/// Per-observation scores `s_i = Σ_e θ_e·h_ie`.
pub fn edge_scores(
    theta: &Array1<f64>,
    h: &SimilarityTensor,
) -> Result<Array1<f64>, GraphModelError> {
    check_theta(theta, h)?;
    Ok(h.values.dot(theta))
}

/// Stable softmax of the scores plus the log-sum-exp value, shared by the
/// likelihood and its gradient.
fn softmax_parts(scores: &Array1<f64>) -> (Array1<f64>, f64) {
    let smax = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted = scores.mapv(|s| (s - smax).exp());
    let total: f64 = shifted.sum();
    (shifted / total, smax + total.ln())
}

/// `logL(θ) = Σ_i s_i − n·log Σ_i exp(s_i)`, evaluated with a shifted
/// (max-subtracted) log-sum-exp so score magnitudes up to ~1e300 stay
/// finite.
pub fn pseudo_log_likelihood(
    theta: &Array1<f64>,
    h: &SimilarityTensor,
) -> Result<f64, GraphModelError> {
    let scores = edge_scores(theta, h)?;
    let n = scores.len() as f64;
    let (_, log_z) = softmax_parts(&scores);
    Ok(scores.sum() - n * log_z)
}

/// `valuesᵀ·x`, accumulated row-by-row in the tensor's storage order.
///
/// The obvious `values.t().dot(&x)` walks each transposed row — an original
/// column — with an m-long stride, a cache miss per element, and the fit
/// spends almost all its time in this one product. Streaming the rows
/// instead touches the tensor once, in storage order, and accumulates each
/// output entry over ascending row index — one fixed, deterministic
/// summation order.
fn columns_dot(values: &Array2<f64>, x: &Array1<f64>) -> Array1<f64> {
    let mut out = Array1::<f64>::zeros(values.ncols());
    let out_s = out.as_slice_mut().expect("fresh vector is contiguous");
    for (row, &c) in values.outer_iter().zip(x.iter()) {
        match row.to_slice() {
            Some(row_s) => {
                for (o, &v) in out_s.iter_mut().zip(row_s) {
                    *o += c * v;
                }
            }
            None => {
                for (o, &v) in out_s.iter_mut().zip(row.iter()) {
                    *o += c * v;
                }
            }
        }
    }
    out
}

/// Analytic gradient of [`pseudo_log_likelihood`]:
/// `∂logL/∂θ_e = Σ_i h_ie − n·Σ_i softmax(s)_i·h_ie`.
pub fn gradient(
    theta: &Array1<f64>,
    h: &SimilarityTensor,
) -> Result<Array1<f64>, GraphModelError> {
    let scores = edge_scores(theta, h)?;
    let n = scores.len() as f64;
    let (soft, _) = softmax_parts(&scores);
    let col_sums = columns_dot(&h.values, &Array1::ones(h.n()));
    let weighted = columns_dot(&h.values, &soft);
    Ok(col_sums - n * weighted)
}

fn infinity_norm(v: &Array1<f64>) -> f64 {
    v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

/// Maximize the pseudo log-likelihood by gradient ascent from a random
/// `σ0`-scale start.
///
/// Stops when the gradient infinity norm drops below `cfg.tolerance`, after
/// `cfg.max_iters` iterations, or when backtracking cannot find any
/// ascending step (numerically at an optimum). With `cfg.l2 > 0` the
/// maximized objective is `logL(θ) − l2/2·‖θ‖²`. Deterministic for a fixed
/// config.
pub fn fit(
    h: &SimilarityTensor,
    cfg: &FitConfig,
) -> Result<(Array1<f64>, FitTrace), GraphModelError> {
    let n = h.n();
    if n < 2 {
        return Err(GraphModelError::DegenerateInput { n });
    }
    let n_f = n as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, cfg.init_scale).expect("init scale is a valid std-dev");
    let mut theta = Array1::from_shape_fn(h.m(), |_| normal.sample(&mut rng));
    let initial_theta = theta.clone();

    // The tensor is the big object here (n·m values); every full pass over
    // it dominates an iteration, so the loop is arranged to touch it as few
    // times as possible: the θ-independent gradient term is hoisted, and
    // each iterate's scores are computed once and shared by the likelihood
    // and the gradient.
    let col_sums = h.values.t().dot(&Array1::ones(n));
    let log_likelihood = |scores: &Array1<f64>| -> f64 {
        let (_, log_z) = softmax_parts(scores);
        scores.sum() - n_f * log_z
    };
    let penalty = |theta: &Array1<f64>| 0.5 * cfg.l2 * theta.iter().map(|x| x * x).sum::<f64>();

    let mut trace = FitTrace {
        log_likelihood: Vec::new(),
        grad_norm: Vec::new(),
        initial_theta,
    };
    let mut scores = edge_scores(&theta, h)?;
    let mut current_ll = log_likelihood(&scores);
    let mut current = current_ll - penalty(&theta);
    let mut step = cfg.learning_rate;

    for iter in 0..cfg.max_iters {
        if !current.is_finite() {
            return Err(GraphModelError::NonFiniteLikelihood { iter });
        }
        let (soft, _) = softmax_parts(&scores);
        let weighted = h.values.t().dot(&soft);
        let mut dir = &col_sums - &(n_f * weighted);
        if cfg.l2 > 0.0 {
            dir = dir - cfg.l2 * &theta;
        }
        let gnorm = infinity_norm(&dir);
        trace.log_likelihood.push(current_ll);
        trace.grad_norm.push(gnorm);
        if !gnorm.is_finite() {
            return Err(GraphModelError::NonFiniteLikelihood { iter });
        }
        if gnorm < cfg.tolerance {
            break;
        }

        if cfg.backtracking {
            // Start from double the last accepted step (capped at a modest
            // multiple of the configured rate) and halve until the objective
            // stops decreasing.
            let mut eta = (step * 2.0).min(cfg.learning_rate * 1024.0);
            let mut accepted = false;
            for _ in 0..=20 {
                let candidate = &theta + &(eta * &dir);
                let cand_scores = edge_scores(&candidate, h)?;
                let cand_ll = log_likelihood(&cand_scores);
                let value = cand_ll - penalty(&candidate);
                if value.is_finite() && value >= current {
                    theta = candidate;
                    scores = cand_scores;
                    current_ll = cand_ll;
                    current = value;
                    step = eta;
                    accepted = true;
                    break;
                }
                eta *= 0.5;
            }
            if !accepted {
                // No ascending step at ~1e-6 of the base rate: numerically at
                // the optimum; cutting the trace here keeps it monotone.
                break;
            }
        } else {
            theta = &theta + &(cfg.learning_rate * &dir);
            scores = edge_scores(&theta, h)?;
            current_ll = log_likelihood(&scores);
            current = current_ll - penalty(&theta);
        }
    }

    if !current.is_finite() {
        return Err(GraphModelError::NonFiniteLikelihood {
            iter: cfg.max_iters,
        });
    }
    Ok((theta, trace))
}
