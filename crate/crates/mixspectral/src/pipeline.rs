//! End-to-end orchestration: CSV to clustered report.
//!
//! [`run_pipeline`] chains the stages — ingest, collective factorization,
//! similarity tensor, edge-weight fit, spectral embedding — then runs every
//! configured clustering method at every configured cluster count and
//! scores the results against the dataset's ground-truth classes. The
//! return value carries both the [`RunReport`] (everything that lands in
//! `report.json`) and the fitted intermediate objects, so callers can
//! serialize whichever artifacts they need.
//!
//! Two diagnostic sweeps accompany the benchmark cells: an eigen-diffusion
//! sweep comparing how evenly variance spreads across spectral versus
//! principal-component features as the feature count grows, and a
//! separability sweep comparing between-cluster scatter fractions as the
//! cluster count grows.
//!
//! Everything is deterministic for a fixed config: restart seeds derive
//! from the configured base seed, and parallel cells collect in a fixed
//! order. Wall-clock timings are the one exception, which is why they sit
//! in their own top-level report key that reproducibility comparisons can
//! drop.

use std::path::Path;
use std::time::Instant;

use ndarray::{s, Array1, Array2};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::clustering::{
    default_gamma, gower_dissimilarity, kmeans, kmedoid, kprototype, pca_features,
    ClusterAssignment,
};
use crate::config::{ClusterMethod, PipelineConfig, SchemaDims};
use crate::dataset::{ingest, schema_from_toml_path, MixedDataMatrix};
use crate::factorization::{dense_maps, factorize, objective, FactorModel, FactorizeConfig};
use crate::graph_model::{fit, FitConfig, FitTrace};
use crate::metrics::{
    cluster_entropy, cluster_separability, covariance_eigenvalues, eigen_diffusion, rand_index,
};
use crate::similarity::{similarity_tensor, SimilarityConfig, SimilarityTensor};
use crate::spectral::{
    eigendecompose, laplacian, symmetrize_abs, transform, Embedding, SpectralBasis,
    TransformOptions,
};

/// Any stage failure, tagged with the stage that raised it so drivers can
/// report `stage: detail` without a stack trace.
#[derive(Debug, Error)]
#[error("{stage}: {detail}")]
pub struct PipelineError {
    pub stage: &'static str,
    pub detail: String,
}

fn stage_err(stage: &'static str, e: impl std::fmt::Display) -> PipelineError {
    PipelineError {
        stage,
        detail: e.to_string(),
    }
}

/// Row counts and variable counts of the ingested dataset.
#[derive(Debug, Clone, Serialize)]
pub struct DatasetSummary {
    pub name: String,
    /// Complete rows that entered the pipeline.
    pub rows: usize,
    /// Rows dropped for missing values before any capping.
    pub dropped_rows: usize,
    pub numerical_vars: usize,
    pub encoded_categorical_vars: usize,
    pub total_vars: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct FactorizationSummary {
    pub k: usize,
    /// Unsquared reconstruction objective of the final factors.
    pub final_objective: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub iterations: usize,
    pub final_log_likelihood: f64,
    pub final_grad_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EmbeddingSummary {
    pub l: usize,
    /// Eigenvalue attached to each of the `l` features, in feature order.
    pub eigenvalues: Vec<f64>,
}

/// Aggregated scores for one (method, cluster count) benchmark cell.
/// Means and standard deviations run over the configured restarts
/// (sample std, zero for a single run; K-medoids is deterministic and runs
/// once).
#[derive(Debug, Clone, Serialize)]
pub struct CellReport {
    pub method: String,
    pub cluster_count: usize,
    /// Feature count for the embedding-based methods, absent for methods
    /// that cluster the preprocessed data directly.
    pub feature_count: Option<usize>,
    /// Eigen-diffusion of the feature space used, where one exists.
    pub alpha: Option<f64>,
    pub rand_mean: f64,
    pub rand_std: f64,
    pub entropy_mean: f64,
    pub entropy_std: f64,
    pub separability_mean: f64,
    pub separability_std: f64,
    pub restarts: usize,
    /// Lowest within-cluster cost across restarts and the seed that
    /// produced it.
    pub best_cost: f64,
    pub best_seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EigenSweepPoint {
    pub l: usize,
    pub alpha_se: f64,
    pub alpha_pc: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeparabilitySweepPoint {
    pub cluster_count: usize,
    pub j_se: f64,
    pub j_pc: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Everything `report.json` holds. The resolved config plus the seeds
/// inside it make a run reproducible from its own report; `timings` is the
/// only non-deterministic field.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config: PipelineConfig,
    pub dataset: DatasetSummary,
    pub factorization: FactorizationSummary,
    pub fit: FitSummary,
    pub embedding: EmbeddingSummary,
    pub cells: Vec<CellReport>,
    pub eigen_sweep: Vec<EigenSweepPoint>,
    pub separability_sweep: Vec<SeparabilitySweepPoint>,
    pub timings: Vec<StageTiming>,
}

/// The report plus every fitted intermediate, so callers can persist stage
/// artifacts or keep drilling into the results.
#[derive(Debug)]
pub struct PipelineOutput {
    pub report: RunReport,
    pub data: MixedDataMatrix,
    pub model: FactorModel,
    pub tensor: SimilarityTensor,
    pub theta: Array1<f64>,
    pub trace: FitTrace,
    pub basis: SpectralBasis,
    pub se_embedding: Embedding,
}

// ---------------------------------------------------------------------------
// individual stages (shared by run_pipeline and the staged CLI)

/// Load, encode, and scale the configured dataset.
pub fn ingest_stage(cfg: &PipelineConfig) -> Result<(MixedDataMatrix, usize), PipelineError> {
    let schema =
        schema_from_toml_path(&cfg.data.schema).map_err(|e| stage_err("ingest", e))?;
    let max_rows = (cfg.data.max_rows > 0).then_some(cfg.data.max_rows);
    let (data, _params, dropped) = ingest(&cfg.data.csv, &schema, cfg.data.beta, max_rows)
        .map_err(|e| stage_err("ingest", e))?;
    Ok((data, dropped))
}

/// Factorize the preprocessed matrix with the configured (or derived)
/// latent dimension and report the final unsquared objective.
pub fn factorize_stage(
    cfg: &PipelineConfig,
    data: &MixedDataMatrix,
) -> Result<(FactorModel, f64), PipelineError> {
    let k = if cfg.factorization.k != 0 {
        cfg.factorization.k
    } else {
        data.p().div_ceil(2)
    };
    let fcfg = FactorizeConfig {
        k,
        learning_rate: cfg.factorization.learning_rate,
        epochs: cfg.factorization.epochs,
        seed: cfg.factorization.seed,
        init_scale: cfg.factorization.init_scale,
    };
    let model = factorize(data, &fcfg).map_err(|e| stage_err("factorize", e))?;
    let final_objective = objective(&model, data).map_err(|e| stage_err("factorize", e))?;
    Ok((model, final_objective))
}

/// Rebuild the dense maps from the factors and fill the similarity tensor.
pub fn similarity_stage(
    cfg: &PipelineConfig,
    data: &MixedDataMatrix,
    model: &FactorModel,
) -> Result<SimilarityTensor, PipelineError> {
    let maps = dense_maps(model, data.beta).map_err(|e| stage_err("similarity", e))?;
    similarity_tensor(
        data,
        &maps,
        &SimilarityConfig {
            epsilon: cfg.similarity.epsilon,
        },
    )
    .map_err(|e| stage_err("similarity", e))
}

/// Maximize the pseudo log-likelihood of the edge weights.
pub fn fit_stage(
    cfg: &PipelineConfig,
    tensor: &SimilarityTensor,
) -> Result<(Array1<f64>, FitTrace), PipelineError> {
    let fcfg = FitConfig {
        learning_rate: cfg.fit.learning_rate,
        max_iters: cfg.fit.max_iters,
        tolerance: cfg.fit.tolerance,
        init_scale: cfg.fit.init_scale,
        seed: cfg.fit.seed,
        l2: cfg.fit.l2,
        backtracking: cfg.fit.backtracking,
    };
    fit(tensor, &fcfg).map_err(|e| stage_err("fit-graph", e))
}

/// Turn fitted edge weights into a Laplacian eigenbasis and map the data
/// through its leading `l` features.
pub fn embed_stage(
    cfg: &PipelineConfig,
    data: &MixedDataMatrix,
    theta: &Array1<f64>,
) -> Result<(SpectralBasis, Embedding), PipelineError> {
    let weights = symmetrize_abs(theta.view(), data.p()).map_err(|e| stage_err("embed", e))?;
    let lap = laplacian(&weights);
    let basis = eigendecompose(&lap).map_err(|e| stage_err("embed", e))?;
    let l = if cfg.embedding.l != 0 {
        cfg.embedding.l
    } else {
        data.p().div_ceil(2)
    };
    let opts = TransformOptions {
        order: cfg.embedding.order,
        drop_constant: cfg.embedding.drop_constant,
    };
    let embedding =
        transform(&data.full_matrix(), &basis, l, &opts).map_err(|e| stage_err("embed", e))?;
    Ok((basis, embedding))
}

// ---------------------------------------------------------------------------
// metrics plumbing

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Eigen-diffusion of a feature matrix: how evenly (0, 1] its covariance
/// spectrum spreads variance across the columns.
fn feature_alpha(coords: &Array2<f64>) -> Result<f64, PipelineError> {
    let eig = covariance_eigenvalues(coords).map_err(|e| stage_err("evaluate", e))?;
    eigen_diffusion(&eig).map_err(|e| stage_err("evaluate", e))
}

struct CellTask<'a> {
    method: ClusterMethod,
    cluster_count: usize,
    /// Points scored for separability (and clustered, for the embedding
    /// methods).
    score_points: &'a Array2<f64>,
    feature_count: Option<usize>,
    alpha: Option<f64>,
}

fn run_cell(
    task: &CellTask,
    data: &MixedDataMatrix,
    gower: Option<&Array2<f64>>,
    gamma: f64,
    truth: &[String],
    restarts: usize,
    base_seed: u64,
    max_iters: usize,
) -> Result<CellReport, PipelineError> {
    let err = |e: crate::clustering::ClusteringError| stage_err("cluster", e);
    // K-medoids has no random component, so one run covers every restart.
    let effective_restarts = match task.method {
        ClusterMethod::Kmedoid => 1,
        _ => restarts,
    };

    let mut rands = Vec::with_capacity(effective_restarts);
    let mut entropies = Vec::with_capacity(effective_restarts);
    let mut separabilities = Vec::with_capacity(effective_restarts);
    let mut best: Option<(f64, u64)> = None;

    for r in 0..effective_restarts {
        let seed = base_seed + r as u64;
        let assignment: ClusterAssignment = match task.method {
            ClusterMethod::SeKmeans | ClusterMethod::PcKmeans => {
                kmeans(task.score_points, task.cluster_count, seed, max_iters).map_err(err)?
            }
            ClusterMethod::Kprototype => {
                kprototype(data, task.cluster_count, gamma, seed).map_err(err)?
            }
            ClusterMethod::Kmedoid => {
                let diss = gower.expect("gower matrix is precomputed for kmedoid cells");
                kmedoid(diss, task.cluster_count, seed).map_err(err)?
            }
        };

        rands.push(rand_index(truth, &assignment.labels).map_err(|e| stage_err("evaluate", e))?);
        entropies
            .push(cluster_entropy(truth, &assignment.labels).map_err(|e| stage_err("evaluate", e))?);
        separabilities.push(
            cluster_separability(task.score_points, &assignment)
                .map_err(|e| stage_err("evaluate", e))?,
        );
        if best.map_or(true, |(cost, _)| assignment.cost < cost) {
            best = Some((assignment.cost, seed));
        }
    }

    let (rand_mean, rand_std) = mean_std(&rands);
    let (entropy_mean, entropy_std) = mean_std(&entropies);
    let (separability_mean, separability_std) = mean_std(&separabilities);
    let (best_cost, best_seed) = best.expect("at least one restart ran");
    Ok(CellReport {
        method: task.method.name().to_string(),
        cluster_count: task.cluster_count,
        feature_count: task.feature_count,
        alpha: task.alpha,
        rand_mean,
        rand_std,
        entropy_mean,
        entropy_std,
        separability_mean,
        separability_std,
        restarts: effective_restarts,
        best_cost,
        best_seed,
    })
}

// ---------------------------------------------------------------------------
// sweeps

/// For each feature count in `grid`, the eigen-diffusion of the first-`l`
/// spectral features versus the first-`l` principal components. Both full
/// feature sets are computed once and truncated per grid point; the
/// covariance spectrum of each truncation is re-solved because truncating
/// features does not truncate the spectrum.
pub fn eigen_diffusion_sweep(
    data: &MixedDataMatrix,
    basis: &SpectralBasis,
    opts: &TransformOptions,
    grid: &[usize],
) -> Result<Vec<EigenSweepPoint>, PipelineError> {
    let Some(&l_max) = grid.iter().max() else {
        return Ok(Vec::new());
    };
    let full = data.full_matrix();
    let se_full = transform(&full, basis, l_max, opts).map_err(|e| stage_err("evaluate", e))?;
    let pc_full = pca_features(data, l_max).map_err(|e| stage_err("evaluate", e))?;
    grid.iter()
        .map(|&l| {
            let alpha_se = feature_alpha(&se_full.coords.slice(s![.., ..l]).to_owned())?;
            let alpha_pc = feature_alpha(&pc_full.coords.slice(s![.., ..l]).to_owned())?;
            Ok(EigenSweepPoint { l, alpha_se, alpha_pc })
        })
        .collect()
}

/// For each cluster count in `grid`, K-means on the spectral features
/// versus on the principal components, scored by the between-cluster
/// scatter fraction of the space that was clustered.
pub fn separability_sweep(
    se: &Embedding,
    pc: &Embedding,
    grid: &[usize],
    seed: u64,
    max_iters: usize,
) -> Result<Vec<SeparabilitySweepPoint>, PipelineError> {
    grid.iter()
        .map(|&l_clusters| {
            let j = |coords: &Array2<f64>| -> Result<f64, PipelineError> {
                let assignment =
                    kmeans(coords, l_clusters, seed, max_iters).map_err(|e| stage_err("cluster", e))?;
                cluster_separability(coords, &assignment).map_err(|e| stage_err("evaluate", e))
            };
            Ok(SeparabilitySweepPoint {
                cluster_count: l_clusters,
                j_se: j(&se.coords)?,
                j_pc: j(&pc.coords)?,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// the full run

/// Validate the config, run every stage, score every configured
/// (method, cluster count) cell, and run both diagnostic sweeps.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    let dims: SchemaDims = cfg.validate().map_err(|e| stage_err("config", e))?;
    let mut timings = Vec::new();
    let mut timed = |stage: &str, t: Instant| {
        timings.push(StageTiming {
            stage: stage.to_string(),
            seconds: t.elapsed().as_secs_f64(),
        });
    };

    let t = Instant::now();
    let (data, dropped_rows) = ingest_stage(cfg)?;
    timed("ingest", t);

    let t = Instant::now();
    let (model, final_objective) = factorize_stage(cfg, &data)?;
    timed("factorize", t);

    let t = Instant::now();
    let tensor = similarity_stage(cfg, &data, &model)?;
    timed("similarity", t);

    let t = Instant::now();
    let (theta, trace) = fit_stage(cfg, &tensor)?;
    timed("fit-graph", t);

    let t = Instant::now();
    let (basis, se_embedding) = embed_stage(cfg, &data, &theta)?;
    timed("embed", t);

    let t = Instant::now();
    let l = se_embedding.l();
    let pc_embedding = pca_features(&data, l).map_err(|e| stage_err("cluster", e))?;
    let truth = data.labels.clone().ok_or_else(|| {
        stage_err(
            "evaluate",
            "the dataset has no label column, so rand index and entropy are undefined",
        )
    })?;
    let gamma = cfg.clustering.gamma.unwrap_or_else(|| default_gamma(&data));
    let needs_gower = cfg.clustering.methods.contains(&ClusterMethod::Kmedoid);
    let gower = needs_gower.then(|| gower_dissimilarity(&data));
    let full = data.full_matrix();

    let alpha_se = feature_alpha(&se_embedding.coords)?;
    let alpha_pc = feature_alpha(&pc_embedding.coords)?;

    let tasks: Vec<CellTask> = cfg
        .clustering
        .methods
        .iter()
        .flat_map(|&method| {
            cfg.clustering.cluster_counts.iter().map(move |&c| (method, c))
        })
        .map(|(method, cluster_count)| {
            let (score_points, feature_count, alpha) = match method {
                ClusterMethod::SeKmeans => (&se_embedding.coords, Some(l), Some(alpha_se)),
                ClusterMethod::PcKmeans => (&pc_embedding.coords, Some(l), Some(alpha_pc)),
                // direct methods cluster the data itself; separability is
                // scored in the full preprocessed space
                ClusterMethod::Kprototype | ClusterMethod::Kmedoid => (&full, None, None),
            };
            CellTask {
                method,
                cluster_count,
                score_points,
                feature_count,
                alpha,
            }
        })
        .collect();

    let cells: Vec<CellReport> = tasks
        .par_iter()
        .map(|task| {
            run_cell(
                task,
                &data,
                gower.as_ref(),
                gamma,
                &truth,
                cfg.clustering.restarts,
                cfg.clustering.seed,
                cfg.clustering.max_iters,
            )
        })
        .collect::<Result<_, _>>()?;
    timed("cluster", t);

    let t = Instant::now();
    let opts = TransformOptions {
        order: cfg.embedding.order,
        drop_constant: cfg.embedding.drop_constant,
    };
    let eigen_sweep =
        eigen_diffusion_sweep(&data, &basis, &opts, &cfg.resolved_l_grid(dims))?;
    let separability_sweep = separability_sweep(
        &se_embedding,
        &pc_embedding,
        &cfg.resolved_cluster_grid(),
        cfg.clustering.seed,
        cfg.clustering.max_iters,
    )?;
    timed("sweeps", t);

    let report = RunReport {
        config: cfg.resolved(dims, gamma),
        dataset: DatasetSummary {
            name: cfg.data.name.clone(),
            rows: data.n(),
            dropped_rows,
            numerical_vars: data.p1(),
            encoded_categorical_vars: data.p2(),
            total_vars: data.p(),
        },
        factorization: FactorizationSummary {
            k: model.k,
            final_objective,
        },
        fit: FitSummary {
            iterations: trace.iterations(),
            final_log_likelihood: *trace
                .log_likelihood
                .last()
                .expect("fit records at least the initial iterate"),
            final_grad_norm: *trace
                .grad_norm
                .last()
                .expect("fit records at least the initial iterate"),
        },
        embedding: EmbeddingSummary {
            l,
            eigenvalues: se_embedding.eigenvalues.clone(),
        },
        cells,
        eigen_sweep,
        separability_sweep,
        timings,
    };

    Ok(PipelineOutput {
        report,
        data,
        model,
        tensor,
        theta,
        trace,
        basis,
        se_embedding,
    })
}

// ---------------------------------------------------------------------------
// tabular renderings of the report

fn push_csv_float(out: &mut String, v: f64) {
    use std::fmt::Write as _;
    let _ = write!(out, "{v}");
}

/// The benchmark table: one row per (method, cluster count) cell with rand
/// index and entropy as mean/std pairs.
pub fn tables_csv(report: &RunReport) -> String {
    let mut out =
        String::from("dataset,method,clusters,rand_mean,rand_std,entropy_mean,entropy_std\n");
    for cell in &report.cells {
        use std::fmt::Write as _;
        let _ = write!(
            out,
            "{},{},{}",
            report.dataset.name, cell.method, cell.cluster_count
        );
        for v in [cell.rand_mean, cell.rand_std, cell.entropy_mean, cell.entropy_std] {
            out.push(',');
            push_csv_float(&mut out, v);
        }
        out.push('\n');
    }
    out
}

/// The eigen-diffusion sweep: `l,alpha_se,alpha_pc` per grid point.
pub fn fig2_csv(report: &RunReport) -> String {
    let mut out = String::from("l,alpha_se,alpha_pc\n");
    for point in &report.eigen_sweep {
        use std::fmt::Write as _;
        let _ = write!(out, "{},", point.l);
        push_csv_float(&mut out, point.alpha_se);
        out.push(',');
        push_csv_float(&mut out, point.alpha_pc);
        out.push('\n');
    }
    out
}

/// The separability sweep: `clusters,j_se,j_pc` per grid point.
pub fn fig3_csv(report: &RunReport) -> String {
    let mut out = String::from("clusters,j_se,j_pc\n");
    for point in &report.separability_sweep {
        use std::fmt::Write as _;
        let _ = write!(out, "{},", point.cluster_count);
        push_csv_float(&mut out, point.j_se);
        out.push(',');
        push_csv_float(&mut out, point.j_pc);
        out.push('\n');
    }
    out
}

/// Write the pipeline's output files into `dir`: `report.json`,
/// `tables.csv`, `fig2.csv`, `fig3.csv`, and the spectral coordinates in
/// `embedding.csv`.
pub fn write_outputs(dir: &Path, output: &PipelineOutput) -> Result<(), PipelineError> {
    let werr = |e: crate::persist::PersistError| stage_err("output", e);
    crate::persist::write_json(&dir.join("report.json"), &output.report).map_err(werr)?;
    crate::persist::write_atomic(&dir.join("tables.csv"), &tables_csv(&output.report))
        .map_err(werr)?;
    crate::persist::write_atomic(&dir.join("fig2.csv"), &fig2_csv(&output.report)).map_err(werr)?;
    crate::persist::write_atomic(&dir.join("fig3.csv"), &fig3_csv(&output.report)).map_err(werr)?;
    crate::persist::write_embedding_csv(&dir.join("embedding.csv"), &output.se_embedding.coords)
        .map_err(werr)?;
    Ok(())
}
