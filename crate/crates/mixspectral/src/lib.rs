//! Spectral feature transformations for mixed numerical/categorical data.
//!
//! The library builds a weighted graph over the *variables* of a mixed
//! tabular dataset and embeds each observation on the eigenbasis of that
//! graph's Laplacian. The stages, each its own module:
//!
//! 1. [`dataset`] — ingest a CSV against a declared schema, one-hot encode
//!    categorical variables to ±1, scale numerical variables into `[-beta,
//!    beta]`.
//! 2. [`factorization`] — collective nonnegative factorization of the two
//!    blocks through a shared factor, yielding dense continuous surrogate
//!    values ("dense maps") for every variable.
//! 3. [`similarity`] — per-observation bounded similarity for every variable
//!    pair, dispatching on the pair's types.
//! 4. [`graph_model`] — pseudo-log-likelihood estimation of one edge weight
//!    per variable pair in an exponential-family pairwise model.
//! 5. [`spectral`] — absolute-value symmetrization, graph Laplacian,
//!    eigendecomposition, and the feature map `x -> Phi^T x`.
//! 6. [`clustering`] — K-means on the embedded observations plus the
//!    baselines (PCA features, K-prototypes, K-medoids).
//! 7. [`metrics`] — evaluation measures: eigen diffusion, cluster
//!    separability, Rand index, cluster entropy.
//! 8. [`pipeline`] — glue running the stages end to end with full seed
//!    determinism, producing benchmark reports.
//!
//! [`config`] holds the TOML-backed run configuration shared by the pipeline
//! and the CLI; [`persist`] reads and writes the intermediate artifacts so
//! stages can be run and inspected in isolation.
//!
//! Determinism is a design requirement throughout: every stochastic step
//! takes an explicit seed and uses a portable RNG, so a fixed configuration
//! reproduces results bit for bit on one platform.

pub mod clustering;
pub mod config;
pub mod dataset;
pub mod factorization;
pub mod graph_model;
mod linalg;
pub mod metrics;
pub mod persist;
pub mod pipeline;
pub mod similarity;
pub mod spectral;
