//! Per-observation similarity between variable pairs, the signal the graph
//! model is estimated from.
//!
//! For one observation, the similarity of variables `s` and `t` dispatches
//! on the pair's types:
//!
//! * categorical – categorical: the raw product of the two ±1 entries;
//! * numerical – numerical: the truncated ratio [`g`] applied to the two
//!   scaled raw values;
//! * mixed: [`g`] applied to the *dense-map* values of both variables, the
//!   continuous surrogates from the factorization stage.
//!
//! Every variant lands in `[-1, 1]`. The full [`SimilarityTensor`] holds one
//! value per observation per unordered variable pair, with pairs in
//! lexicographic order `(0,1), (0,2), …` — an ordering relied on by edge
//! weights, persistence, and the Laplacian assembly downstream.

use ndarray::Array2;
use thiserror::Error;

use crate::dataset::MixedDataMatrix;
use crate::factorization::DenseMaps;

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("variable index {index} out of range for p = {p}")]
    IndexOutOfRange { index: usize, p: usize },
    #[error("self-pair (s = t = {index}) has no similarity")]
    SelfPair { index: usize },
    #[error("dimension mismatch: {detail}")]
    DimensionMismatch { detail: String },
    #[error("epsilon must satisfy 0 < epsilon < beta, got epsilon={epsilon}, beta={beta}")]
    InvalidEpsilon { epsilon: f64, beta: f64 },
}

/// Truncation threshold for [`g`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityConfig {
    pub epsilon: f64,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig { epsilon: 0.05 }
    }
}

/// n×m similarity values, m = p(p−1)/2 unordered variable pairs in
/// lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityTensor {
    pub values: Array2<f64>,
    /// Edge `e` connects variables `edges[e].0 < edges[e].1`.
    pub edges: Vec<(usize, usize)>,
    /// Variable count the edge set spans.
    pub p: usize,
}

impl SimilarityTensor {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn m(&self) -> usize {
        self.values.ncols()
    }

    /// Column index of the unordered pair (s, t) in lexicographic order.
    pub fn edge_index(&self, s: usize, t: usize) -> Option<usize> {
        if s == t || s >= self.p || t >= self.p {
            return None;
        }
        let (s, t) = if s < t { (s, t) } else { (t, s) };
        // pairs (0,1)..(0,p-1) come first, then (1,2).., so offset by the
        // triangle count above row s
        Some(s * self.p - s * (s + 1) / 2 + (t - s - 1))
    }
}

/// The complete lexicographic edge set over `p` variables.
pub fn edge_set(p: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::with_capacity(p * (p - 1) / 2);
    for s in 0..p {
        for t in s + 1..p {
            edges.push((s, t));
        }
    }
    edges
}

/// Truncated magnitude-ratio similarity.
///
/// With `a = min(|u|, |z|)` and `b = max(|u|, |z|)`:
///
/// * `a > eps`: `(a/b)·sign(u·z)` — ratio of magnitudes, signed by
///   agreement;
/// * `a <= eps < b`: `eps/b` — one value is noise-level, return a small
///   positive floor instead of an unstable ratio;
/// * `b <= eps`: `1` — both values are noise-level, call them identical.
///
/// Total on finite inputs and always in `[-1, 1]`.
pub fn g(u: f64, z: f64, eps: f64) -> f64 {
    let a = u.abs().min(z.abs());
    let b = u.abs().max(z.abs());
    if a > eps {
        // sign(0) = 0 would need a = 0, impossible here since a > eps > 0
        (a / b) * (u * z).signum()
    } else if eps < b {
        eps / b
    } else {
        1.0
    }
}

fn check_pair(s: usize, t: usize, p: usize) -> Result<(), SimilarityError> {
    if s >= p {
        return Err(SimilarityError::IndexOutOfRange { index: s, p });
    }
    if t >= p {
        return Err(SimilarityError::IndexOutOfRange { index: t, p });
    }
    if s == t {
        return Err(SimilarityError::SelfPair { index: s });
    }
    Ok(())
}

/// Similarity of variables `s` and `t` for observation `i`, dispatching on
/// the pair's types (see the module docs). Symmetric in `(s, t)`.
pub fn pair_similarity(
    i: usize,
    s: usize,
    t: usize,
    data: &MixedDataMatrix,
    maps: &DenseMaps,
    cfg: &SimilarityConfig,
) -> Result<f64, SimilarityError> {
    let p = data.p();
    check_pair(s, t, p)?;
    let p1 = data.p1();
    let numerical = |v: usize| v < p1;
    Ok(if !numerical(s) && !numerical(t) {
        data.value(i, s) * data.value(i, t)
    } else if numerical(s) && numerical(t) {
        g(data.value(i, s), data.value(i, t), cfg.epsilon)
    } else {
        g(maps.value(i, s), maps.value(i, t), cfg.epsilon)
    })
}

/// Fill the full n×m tensor over the complete edge set.
pub fn similarity_tensor(
    data: &MixedDataMatrix,
    maps: &DenseMaps,
    cfg: &SimilarityConfig,
) -> Result<SimilarityTensor, SimilarityError> {
    if !(cfg.epsilon > 0.0 && cfg.epsilon < data.beta) {
        return Err(SimilarityError::InvalidEpsilon {
            epsilon: cfg.epsilon,
            beta: data.beta,
        });
    }
    let n = data.n();
    if maps.xhat_num.nrows() != n || maps.xhat_cat.nrows() != n {
        return Err(SimilarityError::DimensionMismatch {
            detail: format!(
                "data has {n} rows, dense maps have {}x{}",
                maps.xhat_num.nrows(),
                maps.xhat_cat.nrows()
            ),
        });
    }
    if maps.xhat_num.ncols() != data.p1() || maps.xhat_cat.ncols() != data.p2() {
        return Err(SimilarityError::DimensionMismatch {
            detail: format!(
                "data has p1={}, p2={}; dense maps have {}, {}",
                data.p1(),
                data.p2(),
                maps.xhat_num.ncols(),
                maps.xhat_cat.ncols()
            ),
        });
    }

    let p = data.p();
    let edges = edge_set(p);
    let mut values = Array2::<f64>::zeros((n, edges.len()));
    for i in 0..n {
        for (e, &(s, t)) in edges.iter().enumerate() {
            // dispatch re-done inline for speed; identical to pair_similarity
            values[[i, e]] = pair_similarity(i, s, t, data, maps, cfg)
                .expect("edge set indices are in range by construction");
        }
    }
    Ok(SimilarityTensor { values, edges, p })
}
