//! Evaluation measures for embeddings and clusterings: eigenvalue
//! diffusion, cluster separability, Rand index, and total cluster entropy.
//!
//! All four are pure functions of their inputs. The two label-comparison
//! measures are generic over the label type, so string class labels from a
//! dataset compare directly against integer cluster ids.

use std::collections::HashMap;
use std::hash::Hash;

use ndarray::{Array1, Array2, Axis};
use serde::Serialize;
use thiserror::Error;

use crate::clustering::ClusterAssignment;
use crate::linalg;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("need at least 2 observations, got {n}")]
    DegenerateInput { n: usize },
    #[error("every eigenvalue is zero; diffusion is undefined")]
    AllZeroSpectrum,
    #[error("all points are identical; total scatter is zero")]
    ZeroTotalScatter,
    #[error("label sequences have different lengths: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("assignment labels {labels} observations but the data has {n}")]
    AssignmentMismatch { labels: usize, n: usize },
}

/// One evaluated (method, cluster count) combination, as written into
/// reports and benchmark tables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub method: String,
    pub cluster_count: usize,
    /// Embedding dimension, for the feature-based methods.
    pub feature_count: Option<usize>,
    /// Eigenvalue diffusion of the feature spectrum, when one exists.
    pub alpha: Option<f64>,
    pub separability_j: f64,
    pub rand_index: f64,
    pub entropy: f64,
}

/// Eigenvalues of the sample covariance (divisor n−1) of the points,
/// descending. Eigenvalues in `[-1e-10, 0)` are rounding noise and clamp
/// to 0; anything more negative is surfaced as-is so a genuinely broken
/// input cannot masquerade as clean.
pub fn covariance_eigenvalues(points: &Array2<f64>) -> Result<Vec<f64>, MetricsError> {
    let n = points.nrows();
    if n < 2 {
        return Err(MetricsError::DegenerateInput { n });
    }
    let cov = linalg::sample_covariance(points);
    let (mut eigenvalues, _) =
        linalg::jacobi_eigh(&cov).expect("covariance matrices converge under Jacobi sweeps");
    eigenvalues.reverse();
    for ev in eigenvalues.iter_mut() {
        if *ev < 0.0 && *ev >= -1e-10 {
            *ev = 0.0;
        }
    }
    Ok(eigenvalues)
}

/// Diffusion of a spectrum: `(Σλ)² / (l·Σλ²)`, in `(0, 1]`, equal to 1
/// exactly when all eigenvalues are equal. Near 1 means variance spreads
/// evenly over the feature directions; near `1/l` means one direction
/// dominates.
pub fn eigen_diffusion(eigenvalues: &[f64]) -> Result<f64, MetricsError> {
    if eigenvalues.is_empty() || eigenvalues.iter().all(|&ev| ev == 0.0) {
        return Err(MetricsError::AllZeroSpectrum);
    }
    let sum: f64 = eigenvalues.iter().sum();
    let sum_sq: f64 = eigenvalues.iter().map(|ev| ev * ev).sum();
    Ok(sum * sum / (eigenvalues.len() as f64 * sum_sq))
}

/// Separability `J = Tr(S_B)/Tr(S_T)`: the share of total scatter (about
/// the grand mean) explained by between-cluster scatter (cluster means
/// weighted by cluster size). In `[0, 1]`; 0 for a single cluster, 1 when
/// every cluster collapses to its mean.
pub fn cluster_separability(
    points: &Array2<f64>,
    assignment: &ClusterAssignment,
) -> Result<f64, MetricsError> {
    let n = points.nrows();
    if assignment.labels.len() != n {
        return Err(MetricsError::AssignmentMismatch {
            labels: assignment.labels.len(),
            n,
        });
    }
    if n < 2 {
        return Err(MetricsError::DegenerateInput { n });
    }
    let l_dims = points.ncols();
    let grand = points.mean_axis(Axis(0)).expect("n >= 2");

    let total_scatter: f64 = points
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .zip(grand.iter())
                .map(|(x, m)| (x - m) * (x - m))
                .sum::<f64>()
        })
        .sum();
    if total_scatter <= 0.0 {
        return Err(MetricsError::ZeroTotalScatter);
    }

    let mut sums = Array2::<f64>::zeros((assignment.cluster_count, l_dims));
    let mut counts = vec![0usize; assignment.cluster_count];
    for (i, &c) in assignment.labels.iter().enumerate() {
        let mut row = sums.row_mut(c);
        row += &points.row(i);
        counts[c] += 1;
    }
    let mut between = 0.0;
    for c in 0..assignment.cluster_count {
        if counts[c] == 0 {
            continue;
        }
        let n_c = counts[c] as f64;
        let mean_c: Array1<f64> = sums.row(c).mapv(|s| s / n_c);
        between += n_c
            * mean_c
                .iter()
                .zip(grand.iter())
                .map(|(m_c, m)| (m_c - m) * (m_c - m))
                .sum::<f64>();
    }
    Ok(between / total_scatter)
}

fn pairs(count: usize) -> u64 {
    (count as u64) * (count as u64 - 1) / 2
}

/// Rand index between two labelings: the fraction of unordered observation
/// pairs on which they agree (both together or both apart). Computed from
/// the contingency table, equivalent to enumerating all n(n−1)/2 pairs.
/// Invariant under relabeling of either side.
pub fn rand_index<T, U>(truth: &[T], assignment: &[U]) -> Result<f64, MetricsError>
where
    T: Eq + Hash,
    U: Eq + Hash,
{
    if truth.len() != assignment.len() {
        return Err(MetricsError::LengthMismatch {
            left: truth.len(),
            right: assignment.len(),
        });
    }
    let n = truth.len();
    if n < 2 {
        return Err(MetricsError::DegenerateInput { n });
    }

    let mut cells: HashMap<(u32, u32), usize> = HashMap::new();
    let mut truth_ids: HashMap<&T, u32> = HashMap::new();
    let mut assign_ids: HashMap<&U, u32> = HashMap::new();
    let mut truth_counts: Vec<usize> = Vec::new();
    let mut assign_counts: Vec<usize> = Vec::new();
    for (t, a) in truth.iter().zip(assignment) {
        let next_t = truth_ids.len() as u32;
        let ti = *truth_ids.entry(t).or_insert(next_t);
        if ti as usize == truth_counts.len() {
            truth_counts.push(0);
        }
        truth_counts[ti as usize] += 1;
        let next_a = assign_ids.len() as u32;
        let ai = *assign_ids.entry(a).or_insert(next_a);
        if ai as usize == assign_counts.len() {
            assign_counts.push(0);
        }
        assign_counts[ai as usize] += 1;
        *cells.entry((ti, ai)).or_insert(0) += 1;
    }

    let same_both: u64 = cells.values().map(|&c| pairs(c)).sum();
    let same_truth: u64 = truth_counts.iter().map(|&c| pairs(c)).sum();
    let same_assign: u64 = assign_counts.iter().map(|&c| pairs(c)).sum();
    let total = pairs(n);
    // agreements: together in both (a) + apart in both (d)
    let disagreements = (same_truth - same_both) + (same_assign - same_both);
    Ok((total - disagreements) as f64 / total as f64)
}

/// Total cluster entropy: for each non-empty cluster, the natural-log
/// entropy of its class composition, summed over clusters without size
/// weighting. Zero exactly when every cluster is pure.
pub fn cluster_entropy<T, U>(truth: &[T], assignment: &[U]) -> Result<f64, MetricsError>
where
    T: Eq + Hash,
    U: Eq + Hash,
{
    if truth.len() != assignment.len() {
        return Err(MetricsError::LengthMismatch {
            left: truth.len(),
            right: assignment.len(),
        });
    }
    let mut clusters: HashMap<&U, HashMap<&T, usize>> = HashMap::new();
    for (t, a) in truth.iter().zip(assignment) {
        *clusters.entry(a).or_default().entry(t).or_insert(0) += 1;
    }
    let mut total = 0.0;
    for histogram in clusters.values() {
        let n_c: usize = histogram.values().sum();
        for &count in histogram.values() {
            if count > 0 {
                let p = count as f64 / n_c as f64;
                total -= p * p.ln();
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn assignment(labels: Vec<usize>, cluster_count: usize) -> ClusterAssignment {
        ClusterAssignment {
            labels,
            cluster_count,
            cost: 0.0,
            empty_clusters: Vec::new(),
        }
    }

    #[test]
    fn covariance_eigenvalues_of_a_single_axis() {
        // variance 2 on axis 0, nothing elsewhere
        let points = array![[2.0, 0.0], [0.0, 0.0], [-2.0, 0.0], [0.0, 0.0]];
        let evs = covariance_eigenvalues(&points).unwrap();
        assert_abs_diff_eq!(evs[0], 8.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(evs[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn covariance_eigenvalues_isotropic_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let points = Array2::from_shape_fn((4000, 3), |_| normal.sample(&mut rng));
        for ev in covariance_eigenvalues(&points).unwrap() {
            assert!((ev - 1.0).abs() < 0.1, "eigenvalue {ev} too far from 1");
        }
    }

    #[test]
    fn covariance_eigenvalues_match_a_hand_eigensolve() {
        // 3 points in the plane; covariance worked out by hand:
        // points (0,0), (1,1), (2,0) -> mean (1, 1/3)
        // cov = [[1, 0], [0, 1/3]]
        let points = array![[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]];
        let evs = covariance_eigenvalues(&points).unwrap();
        assert_abs_diff_eq!(evs[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(evs[1], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn covariance_eigenvalues_require_two_rows() {
        let points = array![[1.0, 2.0]];
        assert!(matches!(
            covariance_eigenvalues(&points).unwrap_err(),
            MetricsError::DegenerateInput { n: 1 }
        ));
    }

    #[test]
    fn diffusion_formula_cases() {
        assert_abs_diff_eq!(eigen_diffusion(&[1.0, 1.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(eigen_diffusion(&[3.0, 1.0]).unwrap(), 0.8);
        assert_abs_diff_eq!(eigen_diffusion(&[5.0]).unwrap(), 1.0);
    }

    #[test]
    fn diffusion_is_one_exactly_for_flat_spectra() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let l = rng.gen_range(1..=6);
            let flat = vec![rng.gen::<f64>() + 0.1; l];
            assert_abs_diff_eq!(eigen_diffusion(&flat).unwrap(), 1.0, epsilon = 1e-12);
            let mut bumped = flat.clone();
            if l > 1 {
                bumped[0] *= 2.0;
                let alpha = eigen_diffusion(&bumped).unwrap();
                assert!(alpha < 1.0 && alpha > 0.0);
            }
        }
    }

    #[test]
    fn diffusion_rejects_a_zero_spectrum() {
        assert!(matches!(
            eigen_diffusion(&[0.0, 0.0]).unwrap_err(),
            MetricsError::AllZeroSpectrum
        ));
        assert!(matches!(
            eigen_diffusion(&[]).unwrap_err(),
            MetricsError::AllZeroSpectrum
        ));
    }

    #[test]
    fn separability_single_cluster_is_zero() {
        let points = array![[0.0, 1.0], [2.0, -1.0], [1.0, 0.5]];
        let j = cluster_separability(&points, &assignment(vec![0, 0, 0], 1)).unwrap();
        assert_abs_diff_eq!(j, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn separability_singleton_clusters_is_one() {
        let points = array![[0.0, 1.0], [2.0, -1.0], [1.0, 0.5]];
        let j = cluster_separability(&points, &assignment(vec![0, 1, 2], 3)).unwrap();
        assert_abs_diff_eq!(j, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn separability_matches_hand_scatter() {
        // clusters {(0,0),(2,0)} and {(10,0),(12,0)}: grand mean (6,0),
        // cluster means (1,0) and (11,0)
        // Tr S_T = 36+16+16+36 = 104; Tr S_B = 2*25 + 2*25 = 100
        let points = array![[0.0, 0.0], [2.0, 0.0], [10.0, 0.0], [12.0, 0.0]];
        let j = cluster_separability(&points, &assignment(vec![0, 0, 1, 1], 2)).unwrap();
        assert_abs_diff_eq!(j, 100.0 / 104.0, epsilon = 1e-12);
    }

    #[test]
    fn separability_is_invariant_under_rotation_and_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let points = Array2::from_shape_fn((20, 2), |_| rng.gen::<f64>() * 4.0 - 2.0);
        let labels: Vec<usize> = (0..20).map(|i| i % 3).collect();
        let a = assignment(labels, 3);
        let j0 = cluster_separability(&points, &a).unwrap();
        // rotate by 0.7 rad and translate by (5, -3)
        let (s, c) = (0.7f64.sin(), 0.7f64.cos());
        let moved = Array2::from_shape_fn((20, 2), |(i, d)| {
            let (x, y) = (points[[i, 0]], points[[i, 1]]);
            if d == 0 {
                c * x - s * y + 5.0
            } else {
                s * x + c * y - 3.0
            }
        });
        let j1 = cluster_separability(&moved, &a).unwrap();
        assert_abs_diff_eq!(j0, j1, epsilon = 1e-10);
    }

    #[test]
    fn separability_rejects_identical_points_and_bad_lengths() {
        let points = Array2::zeros((3, 2));
        assert!(matches!(
            cluster_separability(&points, &assignment(vec![0, 1, 0], 2)).unwrap_err(),
            MetricsError::ZeroTotalScatter
        ));
        let points = array![[1.0], [2.0]];
        assert!(matches!(
            cluster_separability(&points, &assignment(vec![0], 1)).unwrap_err(),
            MetricsError::AssignmentMismatch { .. }
        ));
    }

    #[test]
    fn rand_index_identical_partitions() {
        assert_abs_diff_eq!(rand_index(&[1, 1, 2, 2], &[5, 5, 9, 9]).unwrap(), 1.0);
    }

    #[test]
    fn rand_index_crossed_partitions() {
        // truth (1,1,2,2) vs clusters (1,2,1,2): a=0, b=2, c=2, d=2
        let r = rand_index(&[1, 1, 2, 2], &[1, 2, 1, 2]).unwrap();
        assert_abs_diff_eq!(r, 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn rand_index_single_disagreeing_pair() {
        let r = rand_index(&[1, 2], &[1, 1]).unwrap();
        assert_abs_diff_eq!(r, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rand_index_mixes_label_types() {
        let truth = vec!["yes".to_string(), "yes".into(), "no".into()];
        let clusters = vec![0usize, 0, 1];
        assert_abs_diff_eq!(rand_index(&truth, &clusters).unwrap(), 1.0);
    }

    fn brute_force_rand(truth: &[u8], assignment: &[u8]) -> f64 {
        let n = truth.len();
        let mut agree = 0u64;
        let mut total = 0u64;
        for i in 0..n {
            for j in (i + 1)..n {
                let same_t = truth[i] == truth[j];
                let same_a = assignment[i] == assignment[j];
                if same_t == same_a {
                    agree += 1;
                }
                total += 1;
            }
        }
        agree as f64 / total as f64
    }

    #[test]
    fn rand_index_matches_pair_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let n = rng.gen_range(2..=50);
            let truth: Vec<u8> = (0..n).map(|_| rng.gen_range(0..4)).collect();
            let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..5)).collect();
            let fast = rand_index(&truth, &labels).unwrap();
            let slow = brute_force_rand(&truth, &labels);
            assert_abs_diff_eq!(fast, slow, epsilon = 1e-12);
        }
    }

    #[test]
    fn rand_index_is_relabel_invariant() {
        let truth = [0, 0, 1, 1, 2, 2, 2];
        let labels = [3, 1, 1, 2, 2, 2, 3];
        let r0 = rand_index(&truth, &labels).unwrap();
        // permute cluster ids 1->7, 2->0, 3->4
        let relabeled: Vec<i32> = labels
            .iter()
            .map(|&l| match l {
                1 => 7,
                2 => 0,
                _ => 4,
            })
            .collect();
        assert_abs_diff_eq!(r0, rand_index(&truth, &relabeled).unwrap());
    }

    #[test]
    fn entropy_of_pure_clusters_is_zero() {
        let truth = ["a", "a", "b", "b", "c"];
        let labels = [0, 0, 1, 1, 2];
        assert_abs_diff_eq!(cluster_entropy(&truth, &labels).unwrap(), 0.0);
    }

    #[test]
    fn entropy_of_even_splits() {
        // one cluster split 50/50 -> ln 2
        let e1 = cluster_entropy(&[1, 2, 1, 2], &[0, 0, 0, 0]).unwrap();
        assert_abs_diff_eq!(e1, 2f64.ln(), epsilon = 1e-12);
        // two clusters, each split 50/50 -> 2 ln 2
        let e2 = cluster_entropy(&[1, 2, 1, 2], &[0, 0, 1, 1]).unwrap();
        assert_abs_diff_eq!(e2, 2.0 * 2f64.ln(), epsilon = 1e-12);
    }

    fn brute_force_entropy(truth: &[u8], assignment: &[u8]) -> f64 {
        let clusters: std::collections::HashSet<u8> = assignment.iter().cloned().collect();
        let classes: std::collections::HashSet<u8> = truth.iter().cloned().collect();
        let mut total = 0.0;
        for c in clusters {
            let members: Vec<usize> = (0..truth.len()).filter(|&i| assignment[i] == c).collect();
            for j in &classes {
                let count = members.iter().filter(|&&i| truth[i] == *j).count();
                if count > 0 {
                    let p = count as f64 / members.len() as f64;
                    total -= p * p.ln();
                }
            }
        }
        total
    }

    #[test]
    fn entropy_matches_direct_histograms() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let n = rng.gen_range(2..=50);
            let truth: Vec<u8> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..4)).collect();
            let fast = cluster_entropy(&truth, &labels).unwrap();
            let slow = brute_force_entropy(&truth, &labels);
            assert_abs_diff_eq!(fast, slow, epsilon = 1e-12);
        }
    }

    #[test]
    fn entropy_is_zero_only_for_pure_clusterings() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..50 {
            let n = rng.gen_range(2..=30);
            let truth: Vec<u8> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            let e = cluster_entropy(&truth, &labels).unwrap();
            let pure = (0..n).all(|i| {
                (0..n).all(|j| labels[i] != labels[j] || truth[i] == truth[j])
            });
            assert!(e >= 0.0);
            assert_eq!(e == 0.0, pure, "entropy {e} vs purity {pure}");
        }
    }

    #[test]
    fn length_mismatches_are_rejected() {
        assert!(matches!(
            rand_index(&[1, 2], &[1]).unwrap_err(),
            MetricsError::LengthMismatch { .. }
        ));
        assert!(matches!(
            cluster_entropy(&[1], &[1, 2]).unwrap_err(),
            MetricsError::LengthMismatch { .. }
        ));
    }
}
