//! Observation clustering: K-means on feature embeddings, plus the three
//! baselines it is benchmarked against — naive principal-component
//! features, K-prototypes on the mixed data itself, and K-medoids (PAM) on
//! a Gower dissimilarity matrix.
//!
//! All stochastic routines take an explicit seed and are deterministic per
//! seed. K-means and K-prototypes share one k-means++-style seeding routine
//! so that K-prototypes with `gamma = 0` degenerates to K-means draw for
//! draw, not just in distribution.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::MixedDataMatrix;
use crate::linalg;
use crate::spectral::Embedding;

#[derive(Debug, Error)]
pub enum ClusteringError {
    #[error("cannot form {requested} clusters from {n} observations")]
    TooManyClusters { requested: usize, n: usize },
    #[error("cluster count must be at least 1")]
    ZeroClusters,
    #[error("requested {l} features but the data has {p} variables")]
    InvalidFeatureCount { l: usize, p: usize },
    #[error("need at least 2 observations, got {n}")]
    DegenerateInput { n: usize },
    #[error("dissimilarity matrix is not symmetric with zero diagonal at ({i},{j})")]
    AsymmetricInput { i: usize, j: usize },
    #[error("eigendecomposition did not converge")]
    ConvergenceFailure,
}

/// Result of any clustering routine in this module.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    /// Cluster id in `[0, cluster_count)` per observation.
    pub labels: Vec<usize>,
    pub cluster_count: usize,
    /// The minimized objective: inertia for K-means, mixed cost for
    /// K-prototypes, total dissimilarity to medoids for K-medoids.
    pub cost: f64,
    /// Ids of clusters left with no members. Normally empty — re-seeding
    /// refills empty clusters — but duplicate-heavy degenerate inputs can
    /// legitimately end with fewer distinct groups than requested.
    pub empty_clusters: Vec<usize>,
}

fn check_cluster_count(l_clusters: usize, n: usize) -> Result<(), ClusteringError> {
    if l_clusters == 0 {
        return Err(ClusteringError::ZeroClusters);
    }
    if l_clusters > n {
        return Err(ClusteringError::TooManyClusters {
            requested: l_clusters,
            n,
        });
    }
    Ok(())
}

/// k-means++-style seeding over an abstract point distance: the first
/// center is uniform, each later one is drawn with probability proportional
/// to the distance to its nearest already-chosen center. Falls back to the
/// lowest-index unchosen point when every remaining distance is zero.
fn seed_centers(
    n: usize,
    l_clusters: usize,
    rng: &mut ChaCha8Rng,
    dist: impl Fn(usize, usize) -> f64,
) -> Vec<usize> {
    let mut chosen = Vec::with_capacity(l_clusters);
    chosen.push(rng.gen_range(0..n));
    let mut nearest: Vec<f64> = (0..n).map(|i| dist(i, chosen[0])).collect();
    while chosen.len() < l_clusters {
        let next = match WeightedIndex::new(&nearest) {
            Ok(w) => w.sample(rng),
            // all weights zero: every point coincides with a center
            Err(_) => (0..n)
                .find(|i| !chosen.contains(i))
                .expect("l_clusters <= n leaves an unchosen point"),
        };
        chosen.push(next);
        for i in 0..n {
            nearest[i] = nearest[i].min(dist(i, next));
        }
    }
    chosen
}

/// One alternation engine shared by K-means and K-prototypes. `Centers` is
/// whatever state the method keeps per cluster; the closures supply the
/// point-to-center cost and the center update.
struct Alternation<'a, C> {
    n: usize,
    l_clusters: usize,
    max_iters: usize,
    /// cost of assigning point `i` to center `c`
    point_cost: Box<dyn Fn(&C, usize, usize) -> f64 + 'a>,
    /// recompute center `c` from its member points
    update_center: Box<dyn Fn(&mut C, usize, &[usize]) + 'a>,
}

struct AlternationOutcome {
    labels: Vec<usize>,
    cost: f64,
    empty_clusters: Vec<usize>,
    /// Objective after each assignment phase; non-increasing. Consumed by
    /// the monotonicity unit tests, not by callers.
    #[allow(dead_code)]
    cost_history: Vec<f64>,
}

impl<'a, C> Alternation<'a, C> {
    fn run(&self, centers: &mut C) -> AlternationOutcome {
        let assign = |centers: &C| -> (Vec<usize>, f64) {
            let mut labels = vec![0usize; self.n];
            let mut total = 0.0;
            for i in 0..self.n {
                let mut best = 0usize;
                let mut best_cost = (self.point_cost)(centers, i, 0);
                for c in 1..self.l_clusters {
                    let cost = (self.point_cost)(centers, i, c);
                    if cost < best_cost {
                        best = c;
                        best_cost = cost;
                    }
                }
                labels[i] = best;
                total += best_cost;
            }
            (labels, total)
        };

        let (mut labels, mut cost) = assign(centers);
        let mut cost_history = vec![cost];
        let mut empty_clusters = Vec::new();

        for _ in 0..self.max_iters {
            // refill empty clusters with the farthest point from its center
            // (ties to the lowest index), re-assigning after each move
            loop {
                let mut counts = vec![0usize; self.l_clusters];
                for &c in &labels {
                    counts[c] += 1;
                }
                let Some(empty) = counts.iter().position(|&c| c == 0) else {
                    empty_clusters.clear();
                    break;
                };
                let (far, far_cost) = (0..self.n)
                    .map(|i| (i, (self.point_cost)(centers, i, labels[i])))
                    .fold((0, f64::NEG_INFINITY), |acc, (i, d)| {
                        if d > acc.1 {
                            (i, d)
                        } else {
                            acc
                        }
                    });
                if far_cost <= 0.0 {
                    // every point sits exactly on a center: the cluster is
                    // genuinely empty, flag it instead of spinning
                    empty_clusters = counts
                        .iter()
                        .enumerate()
                        .filter(|(_, &c)| c == 0)
                        .map(|(c, _)| c)
                        .collect();
                    break;
                }
                (self.update_center)(centers, empty, &[far]);
                labels = assign(centers).0;
            }

            let mut members: Vec<Vec<usize>> = vec![Vec::new(); self.l_clusters];
            for (i, &c) in labels.iter().enumerate() {
                members[c].push(i);
            }
            for c in 0..self.l_clusters {
                if !members[c].is_empty() {
                    (self.update_center)(centers, c, &members[c]);
                }
            }

            let (new_labels, new_cost) = assign(centers);
            cost_history.push(new_cost);
            let converged = new_labels == labels;
            labels = new_labels;
            cost = new_cost;
            if converged {
                break;
            }
        }

        AlternationOutcome {
            labels,
            cost,
            empty_clusters,
            cost_history,
        }
    }
}

fn squared_euclidean(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

fn kmeans_engine(
    points: &Array2<f64>,
    l_clusters: usize,
    seed: u64,
    max_iters: usize,
) -> Result<AlternationOutcome, ClusteringError> {
    let n = points.nrows();
    check_cluster_count(l_clusters, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = seed_centers(n, l_clusters, &mut rng, |a, b| {
        squared_euclidean(points.row(a), points.row(b))
    });
    let mut centers = Array2::zeros((l_clusters, points.ncols()));
    for (c, &i) in chosen.iter().enumerate() {
        centers.row_mut(c).assign(&points.row(i));
    }

    let alternation = Alternation {
        n,
        l_clusters,
        max_iters,
        point_cost: Box::new(|centers: &Array2<f64>, i, c| {
            squared_euclidean(points.row(i), centers.row(c))
        }),
        update_center: Box::new(|centers: &mut Array2<f64>, c, members| {
            if members.len() == 1 {
                let row = points.row(members[0]).to_owned();
                centers.row_mut(c).assign(&row);
                return;
            }
            let mut mean = Array1::zeros(points.ncols());
            for &i in members {
                mean += &points.row(i);
            }
            mean /= members.len() as f64;
            centers.row_mut(c).assign(&mean);
        }),
    };
    Ok(alternation.run(&mut centers))
}

/// Lloyd's K-means with k-means++ seeding. `cost` is the inertia (total
/// squared distance of points to their cluster centroids), non-increasing
/// over iterations; empty clusters are re-seeded to the farthest point.
pub fn kmeans(
    points: &Array2<f64>,
    l_clusters: usize,
    seed: u64,
    max_iters: usize,
) -> Result<ClusterAssignment, ClusteringError> {
    let outcome = kmeans_engine(points, l_clusters, seed, max_iters)?;
    Ok(ClusterAssignment {
        labels: outcome.labels,
        cluster_count: l_clusters,
        cost: outcome.cost,
        empty_clusters: outcome.empty_clusters,
    })
}

/// Principal-component features of the preprocessed matrix: mean-center the
/// full (numerical + encoded categorical) matrix, eigendecompose its sample
/// covariance, and project onto the `l` leading (largest-eigenvalue)
/// directions. The benchmark's "PC" baseline.
pub fn pca_features(data: &MixedDataMatrix, l: usize) -> Result<Embedding, ClusteringError> {
    let full = data.full_matrix();
    let (n, p) = full.dim();
    if n < 2 {
        return Err(ClusteringError::DegenerateInput { n });
    }
    if l == 0 || l > p {
        return Err(ClusteringError::InvalidFeatureCount { l, p });
    }
    let mean = full.mean_axis(Axis(0)).expect("n >= 2");
    let centered = &full - &mean.broadcast((n, p)).expect("row broadcast");
    let cov = linalg::sample_covariance(&centered);
    let (eigenvalues, eigenvectors) =
        linalg::jacobi_eigh(&cov).map_err(|_| ClusteringError::ConvergenceFailure)?;

    // jacobi_eigh sorts ascending; principal components want the top end
    let mut coords = Array2::zeros((n, l));
    let mut kept = Vec::with_capacity(l);
    for out_j in 0..l {
        let j = p - 1 - out_j;
        let proj = centered.dot(&eigenvectors.column(j));
        coords.column_mut(out_j).assign(&proj);
        kept.push(eigenvalues[j]);
    }
    Ok(Embedding {
        coords,
        eigenvalues: kept,
    })
}

/// Per-cluster state for K-prototypes: numerical means plus one categorical
/// mode (level index) per original categorical variable.
struct Prototypes {
    means: Array2<f64>,
    modes: Vec<Vec<usize>>,
}

/// Decode the one-hot categorical block back to level indices, one column
/// per original categorical variable.
fn categorical_levels(data: &MixedDataMatrix) -> Vec<Vec<usize>> {
    let offsets = data.cat_group_offsets();
    (0..data.n())
        .map(|i| {
            offsets
                .iter()
                .enumerate()
                .map(|(g, &off)| data.cat_level(i, g, off))
                .collect()
        })
        .collect()
}

/// Huang's K-prototypes: squared Euclidean cost on the numerical block plus
/// `gamma` per categorical mismatch, alternating cluster means and modes.
/// With `gamma = 0` and identical seed it reproduces [`kmeans`] labels on
/// the numerical block.
pub fn kprototype(
    data: &MixedDataMatrix,
    l_clusters: usize,
    gamma: f64,
    seed: u64,
) -> Result<ClusterAssignment, ClusteringError> {
    const MAX_ITERS: usize = 100;
    let n = data.n();
    check_cluster_count(l_clusters, n)?;
    let levels = categorical_levels(data);
    let groups = data.cat_group_sizes.len();
    let group_sizes = data.cat_group_sizes.clone();

    let mixed_cost = |a: usize, num_b: ArrayView1<f64>, modes_b: &[usize]| -> f64 {
        let num = squared_euclidean(data.num_block.row(a), num_b);
        let mismatches = levels[a]
            .iter()
            .zip(modes_b)
            .filter(|(x, y)| x != y)
            .count();
        num + gamma * mismatches as f64
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = seed_centers(n, l_clusters, &mut rng, |a, b| {
        mixed_cost(a, data.num_block.row(b), &levels[b])
    });
    let mut prototypes = Prototypes {
        means: Array2::zeros((l_clusters, data.p1())),
        modes: vec![vec![0usize; groups]; l_clusters],
    };
    for (c, &i) in chosen.iter().enumerate() {
        prototypes.means.row_mut(c).assign(&data.num_block.row(i));
        prototypes.modes[c] = levels[i].clone();
    }

    let alternation = Alternation {
        n,
        l_clusters,
        max_iters: MAX_ITERS,
        point_cost: Box::new(|proto: &Prototypes, i, c| {
            mixed_cost(i, proto.means.row(c), &proto.modes[c])
        }),
        update_center: Box::new(|proto: &mut Prototypes, c, members| {
            if members.len() == 1 {
                let i = members[0];
                let row = data.num_block.row(i).to_owned();
                proto.means.row_mut(c).assign(&row);
                proto.modes[c] = levels[i].clone();
                return;
            }
            let mut mean = Array1::zeros(data.p1());
            for &i in members {
                mean += &data.num_block.row(i);
            }
            mean /= members.len() as f64;
            proto.means.row_mut(c).assign(&mean);
            for g in 0..groups {
                let mut counts = vec![0usize; group_sizes[g]];
                for &i in members {
                    counts[levels[i][g]] += 1;
                }
                // mode; ties to the lowest level index
                proto.modes[c][g] = counts
                    .iter()
                    .enumerate()
                    .max_by(|(ia, a), (ib, b)| a.cmp(b).then(ib.cmp(ia)))
                    .map(|(idx, _)| idx)
                    .expect("categorical variables have at least one level");
            }
        }),
    };
    let outcome = alternation.run(&mut prototypes);
    Ok(ClusterAssignment {
        labels: outcome.labels,
        cluster_count: l_clusters,
        cost: outcome.cost,
        empty_clusters: outcome.empty_clusters,
    })
}

/// Huang's rule of thumb for the K-prototypes trade-off weight: half the
/// average per-column standard deviation of the numerical block.
pub fn default_gamma(data: &MixedDataMatrix) -> f64 {
    let p1 = data.p1();
    if p1 == 0 || data.n() < 2 {
        return 1.0;
    }
    let n = data.n() as f64;
    let mut total = 0.0;
    for col in data.num_block.columns() {
        let mean = col.sum() / n;
        let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        total += var.sqrt();
    }
    0.5 * total / p1 as f64
}

/// Gower dissimilarity over the mixed data: per pair, the average of
/// range-normalized absolute differences (numerical columns) and 0/1
/// mismatches (original categorical variables). Symmetric, zero diagonal,
/// entries in `[0, 1]`. Columns with zero range contribute 0.
pub fn gower_dissimilarity(data: &MixedDataMatrix) -> Array2<f64> {
    let n = data.n();
    let p1 = data.p1();
    let levels = categorical_levels(data);
    let groups = data.cat_group_sizes.len();
    let vars = (p1 + groups) as f64;

    let mut ranges = Vec::with_capacity(p1);
    for col in data.num_block.columns() {
        let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        ranges.push(max - min);
    }

    let mut diss = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let mut acc = 0.0;
            for v in 0..p1 {
                if ranges[v] > 0.0 {
                    acc += (data.num_block[[i, v]] - data.num_block[[j, v]]).abs() / ranges[v];
                }
            }
            for g in 0..groups {
                if levels[i][g] != levels[j][g] {
                    acc += 1.0;
                }
            }
            let d = acc / vars;
            diss[[i, j]] = d;
            diss[[j, i]] = d;
        }
    }
    diss
}

/// Nearest and second-nearest medoid bookkeeping for PAM.
struct MedoidDistances {
    nearest: Vec<usize>,
    nearest_d: Vec<f64>,
    second_d: Vec<f64>,
}

fn medoid_distances(diss: &Array2<f64>, medoids: &[usize]) -> MedoidDistances {
    let n = diss.nrows();
    let mut nearest = vec![0usize; n];
    let mut nearest_d = vec![f64::INFINITY; n];
    let mut second_d = vec![f64::INFINITY; n];
    for i in 0..n {
        for &m in medoids {
            let d = diss[[i, m]];
            if d < nearest_d[i] {
                second_d[i] = nearest_d[i];
                nearest_d[i] = d;
                nearest[i] = m;
            } else if d < second_d[i] {
                second_d[i] = d;
            }
        }
    }
    MedoidDistances {
        nearest,
        nearest_d,
        second_d,
    }
}

/// Total dissimilarity of all points to their nearest medoid.
fn medoid_cost(diss: &Array2<f64>, medoids: &[usize]) -> f64 {
    (0..diss.nrows())
        .map(|i| {
            medoids
                .iter()
                .map(|&m| diss[[i, m]])
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

/// Number of L-subsets of n points, saturating to keep the comparison safe.
fn subset_count(n: usize, l: usize) -> usize {
    let mut count: usize = 1;
    for i in 0..l {
        count = match count.checked_mul(n - i) {
            Some(c) => c / (i + 1),
            None => return usize::MAX,
        };
    }
    count
}

/// Exact K-medoids by enumerating every candidate subset; only used when
/// that space is tiny. Ties go to the lexicographically smallest subset.
fn exhaustive_medoids(diss: &Array2<f64>, l_clusters: usize) -> Vec<usize> {
    let n = diss.nrows();
    let mut subset: Vec<usize> = (0..l_clusters).collect();
    let mut best = subset.clone();
    let mut best_cost = medoid_cost(diss, &subset);
    loop {
        // advance to the next combination in lexicographic order
        let mut idx = l_clusters;
        for i in (0..l_clusters).rev() {
            if subset[i] < n - (l_clusters - i) {
                idx = i;
                break;
            }
        }
        if idx == l_clusters {
            break;
        }
        subset[idx] += 1;
        for i in (idx + 1)..l_clusters {
            subset[i] = subset[i - 1] + 1;
        }
        let cost = medoid_cost(diss, &subset);
        if cost < best_cost - 1e-15 {
            best_cost = cost;
            best = subset.clone();
        }
    }
    best
}

/// PAM: greedy BUILD seeding, then best-improvement SWAP until no
/// medoid/non-medoid exchange lowers the total dissimilarity.
fn pam_medoids(diss: &Array2<f64>, l_clusters: usize) -> Vec<usize> {
    let n = diss.nrows();

    // BUILD: start from the most central point, then greedily add the point
    // with the largest total-dissimilarity reduction (ties: lowest index)
    let mut medoids = Vec::with_capacity(l_clusters);
    let first = (0..n)
        .map(|c| (c, diss.row(c).sum()))
        .min_by(|a, b| {
            a.1.partial_cmp(&b.1)
                .expect("finite dissimilarities")
                .then(a.0.cmp(&b.0))
        })
        .map(|(c, _)| c)
        .expect("n >= 1");
    medoids.push(first);
    let mut nearest_d: Vec<f64> = (0..n).map(|i| diss[[i, first]]).collect();
    while medoids.len() < l_clusters {
        let mut best = usize::MAX;
        let mut best_gain = f64::NEG_INFINITY;
        for c in 0..n {
            if medoids.contains(&c) {
                continue;
            }
            let gain: f64 = (0..n)
                .map(|i| (nearest_d[i] - diss[[i, c]]).max(0.0))
                .sum();
            if gain > best_gain {
                best_gain = gain;
                best = c;
            }
        }
        medoids.push(best);
        for i in 0..n {
            nearest_d[i] = nearest_d[i].min(diss[[i, best]]);
        }
    }

    // SWAP: apply the single best exchange while one lowers the objective
    const MAX_SWAPS: usize = 10_000;
    for _ in 0..MAX_SWAPS {
        let dists = medoid_distances(diss, &medoids);
        let mut best_delta = -1e-12;
        let mut best_swap: Option<(usize, usize)> = None;
        for (mi, &m) in medoids.iter().enumerate() {
            for h in 0..n {
                if medoids.contains(&h) {
                    continue;
                }
                let mut delta = 0.0;
                for i in 0..n {
                    let d_h = diss[[i, h]];
                    if dists.nearest[i] == m {
                        delta += d_h.min(dists.second_d[i]) - dists.nearest_d[i];
                    } else if d_h < dists.nearest_d[i] {
                        delta += d_h - dists.nearest_d[i];
                    }
                }
                if delta < best_delta {
                    best_delta = delta;
                    best_swap = Some((mi, h));
                }
            }
        }
        match best_swap {
            Some((mi, h)) => medoids[mi] = h,
            None => break,
        }
    }
    medoids
}

/// K-medoids on a precomputed dissimilarity matrix.
///
/// Instances whose candidate space is tiny (at most 256 medoid subsets) are
/// solved exactly by enumeration — at that size the exact answer is cheaper
/// than the swap loop's worst case. Everything larger runs PAM: greedy
/// BUILD seeding then best-improvement SWAP, a local search whose total
/// dissimilarity is non-increasing over swaps. Both paths are fully
/// deterministic, so `seed` never changes the result; the parameter exists
/// for signature uniformity with the other clustering routines.
pub fn kmedoid(
    diss: &Array2<f64>,
    l_clusters: usize,
    _seed: u64,
) -> Result<ClusterAssignment, ClusteringError> {
    let n = diss.nrows();
    if diss.ncols() != n {
        return Err(ClusteringError::AsymmetricInput { i: n, j: diss.ncols() });
    }
    for i in 0..n {
        if diss[[i, i]] != 0.0 {
            return Err(ClusteringError::AsymmetricInput { i, j: i });
        }
        for j in (i + 1)..n {
            if (diss[[i, j]] - diss[[j, i]]).abs() > 1e-12 {
                return Err(ClusteringError::AsymmetricInput { i, j });
            }
        }
    }
    check_cluster_count(l_clusters, n)?;

    const EXHAUSTIVE_LIMIT: usize = 256;
    let medoids = if subset_count(n, l_clusters) <= EXHAUSTIVE_LIMIT {
        exhaustive_medoids(diss, l_clusters)
    } else {
        pam_medoids(diss, l_clusters)
    };

    let dists = medoid_distances(diss, &medoids);
    let mut medoid_cluster = vec![0usize; n];
    for (c, &m) in medoids.iter().enumerate() {
        medoid_cluster[m] = c;
    }
    let labels: Vec<usize> = dists.nearest.iter().map(|&m| medoid_cluster[m]).collect();
    let cost = dists.nearest_d.iter().sum();
    Ok(ClusterAssignment {
        labels,
        cluster_count: l_clusters,
        cost,
        empty_clusters: Vec::new(),
    })
}
