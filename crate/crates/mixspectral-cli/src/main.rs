//! Command-line driver for the mixspectral pipeline.
//!
//! One subcommand per stage (`ingest`, `factorize`, `fit-graph`, `embed`,
//! `cluster`, `evaluate`) plus `pipeline` for the whole chain and
//! `benchmark` for a list of dataset configs. Stage subcommands communicate
//! through text artifacts in the output directory, so a run can be split,
//! inspected, and resumed; every artifact reloads to exactly the values the
//! producing stage computed.
//!
//! Exit codes: 0 on success, 1 on a usage error (bad flags, malformed
//! overrides), 2 on a stage failure (reported as `stage: detail`, never a
//! backtrace).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};

use mixspectral::clustering::{
    default_gamma, gower_dissimilarity, kmeans, kmedoid, kprototype, pca_features,
    ClusterAssignment,
};
use mixspectral::config::{ClusterMethod, ConfigError, PipelineConfig};
use mixspectral::metrics::{
    cluster_entropy, cluster_separability, covariance_eigenvalues, eigen_diffusion, rand_index,
    MetricsReport,
};
use mixspectral::persist;
use mixspectral::pipeline::{
    self, embed_stage, factorize_stage, fit_stage, ingest_stage, run_pipeline, similarity_stage,
};

const CONFIG_REFERENCE: &str = "\
CONFIG KEYS (TOML; all optional except data.csv and data.schema):
  [data]
    csv             dataset CSV path (required)
    schema          column schema TOML path (required)
    name            name used in reports/tables    default: CSV file stem
    max_rows        keep first N complete rows     default: 0 (keep all)
    beta            numerical scaling bound        default: 1
  [factorization]
    k               latent dimension               default: 0 = ceil((p1+p2)/2)
    learning_rate   SGD step size                  default: 0.005
    epochs          SGD passes over the data       default: 200
    seed            RNG seed                       default: 17
    init_scale      factors start in (0, scale]    default: 0.1
  [similarity]
    epsilon         ratio truncation threshold     default: 0.05
  [fit]
    learning_rate   ascent step size               default: 0.001
    max_iters       iteration cap                  default: 2000
    tolerance       gradient stopping norm         default: 0.00001
    init_scale      Normal(0, scale) start         default: 0.01
    seed            RNG seed                       default: 23
    l2              L2 penalty (0 = off)           default: 0
    backtracking    halve non-improving steps      default: true
  [embedding]
    l               feature count                  default: 0 = ceil(p/2)
    order           ascending | descending         default: ascending
    drop_constant   skip zero-eigenvalue features  default: false
  [clustering]
    cluster_counts  benchmark cluster counts       default: [2, 5, 10]
    methods         se-kmeans | pc-kmeans |
                    kprototype | kmedoid           default: all four
    restarts        runs per benchmark cell        default: 10
    seed            base RNG seed                  default: 31
    gamma           K-prototypes weight            default: derived (half the
                                                   mean numerical-column std)
    max_iters       alternation iteration cap      default: 100
  [sweeps]
    l_grid          eigen-diffusion grid           default: 2..=p (p-1 with
                                                   drop_constant)
    cluster_grid    separability grid              default: 2..=10
  [output]
    dir             output directory               default: out

BENCHMARK FILE (for the benchmark subcommand):
  configs = [\"heart.toml\", \"tae.toml\"]   dataset configs, relative to
                                           the benchmark file";

#[derive(Parser)]
#[command(
    name = "mixspectral",
    version,
    about = "Spectral feature learning and clustering for mixed numerical/categorical data",
    after_help = CONFIG_REFERENCE,
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration TOML (see the key reference under --help).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory; overrides the config's output.dir.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Base seed: sets factorization.seed = SEED, fit.seed = SEED+1,
    /// clustering.seed = SEED+2 (applied after --set overrides).
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,
    /// Cap the worker thread count (default: all cores).
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
    /// Override one config key, e.g. --set fit.seed=7 or
    /// --set clustering.cluster_counts=[2,5]. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", action = ArgAction::Append)]
    set: Vec<String>,
    /// Print stage progress to stderr.
    #[arg(short, long, action = ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Load, encode, and scale the dataset; writes mixed_matrix.txt.
    #[command(after_help = CONFIG_REFERENCE)]
    Ingest(CommonArgs),
    /// Factorize the preprocessed matrix; writes factor_model.txt.
    #[command(after_help = CONFIG_REFERENCE)]
    Factorize(CommonArgs),
    /// Build the similarity tensor and fit edge weights; writes
    /// similarity.txt, edge_weights.txt, fit_trace.csv.
    #[command(after_help = CONFIG_REFERENCE)]
    FitGraph(CommonArgs),
    /// Eigendecompose the weight Laplacian and map the data; writes
    /// spectral_basis.txt, embedding.csv.
    #[command(after_help = CONFIG_REFERENCE)]
    Embed(CommonArgs),
    /// Run every configured clustering method at every cluster count;
    /// writes assignments_<method>_L<count>.csv (best restart by cost).
    #[command(after_help = CONFIG_REFERENCE)]
    Cluster(CommonArgs),
    /// Score assignment files against the ground-truth labels; writes
    /// metrics.json.
    #[command(after_help = CONFIG_REFERENCE)]
    Evaluate(CommonArgs),
    /// Full end-to-end run; writes report.json, tables.csv, fig2.csv,
    /// fig3.csv, embedding.csv.
    #[command(after_help = CONFIG_REFERENCE)]
    Pipeline(CommonArgs),
    /// Run the full pipeline for every dataset config listed in the
    /// benchmark file, each into its own subdirectory.
    #[command(after_help = CONFIG_REFERENCE)]
    Benchmark(CommonArgs),
}

/// Failures that end the process: usage problems (exit 1) or stage
/// failures (exit 2, printed as `stage: detail`).
enum CliError {
    Usage(String),
    Stage { stage: String, detail: String },
}

impl From<pipeline::PipelineError> for CliError {
    fn from(e: pipeline::PipelineError) -> Self {
        CliError::Stage {
            stage: e.stage.to_string(),
            detail: e.detail,
        }
    }
}

fn stage_err(stage: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Stage {
        stage: stage.to_string(),
        detail: e.to_string(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            // clap's message already carries the usage text
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run `mixspectral --help` for usage and the config key reference");
            ExitCode::from(1)
        }
        Err(CliError::Stage { stage, detail }) => {
            eprintln!("error: {stage}: {detail}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (args, handler): (&CommonArgs, fn(&Ctx) -> Result<(), CliError>) = match &cli.command {
        Command::Ingest(a) => (a, cmd_ingest),
        Command::Factorize(a) => (a, cmd_factorize),
        Command::FitGraph(a) => (a, cmd_fit_graph),
        Command::Embed(a) => (a, cmd_embed),
        Command::Cluster(a) => (a, cmd_cluster),
        Command::Evaluate(a) => (a, cmd_evaluate),
        Command::Pipeline(a) => (a, cmd_pipeline),
        Command::Benchmark(a) => (a, cmd_benchmark),
    };

    if let Some(threads) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot set --threads {threads}: {e}")))?;
    }

    // the benchmark subcommand loads per-dataset configs itself
    if matches!(cli.command, Command::Benchmark(_)) {
        return handler(&Ctx {
            args,
            cfg: PipelineConfig::default(),
            out_dir: PathBuf::new(),
        });
    }

    let cfg = load_config(&args.config, args)?;
    let out_dir = args
        .out
        .clone()
        .unwrap_or_else(|| cfg.output.dir.clone());
    handler(&Ctx { args, cfg, out_dir })
}

struct Ctx<'a> {
    args: &'a CommonArgs,
    cfg: PipelineConfig,
    out_dir: PathBuf,
}

impl Ctx<'_> {
    fn progress(&self, msg: &str) {
        if self.args.verbose > 0 {
            eprintln!("[mixspectral] {msg}");
        }
    }
}

/// Parse the config, apply --set then --seed, and validate it, reporting
/// the complete violation list on failure.
fn load_config(path: &Path, args: &CommonArgs) -> Result<PipelineConfig, CliError> {
    let mut cfg = match PipelineConfig::load(path, &args.set) {
        Ok(cfg) => cfg,
        Err(e @ ConfigError::BadOverride { .. }) => {
            return Err(CliError::Usage(e.to_string()));
        }
        Err(e) => return Err(stage_err("config", e)),
    };
    if let Some(seed) = args.seed {
        cfg.factorization.seed = seed;
        cfg.fit.seed = seed + 1;
        cfg.clustering.seed = seed + 2;
    }
    cfg.validate().map_err(|e| stage_err("config", e))?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// artifact names and helpers

const MIXED_MATRIX: &str = "mixed_matrix.txt";
const FACTOR_MODEL: &str = "factor_model.txt";
const SIMILARITY: &str = "similarity.txt";
const EDGE_WEIGHTS: &str = "edge_weights.txt";
const FIT_TRACE: &str = "fit_trace.csv";
const SPECTRAL_BASIS: &str = "spectral_basis.txt";
const EMBEDDING: &str = "embedding.csv";
const METRICS: &str = "metrics.json";

/// Read a stage artifact, pointing at the producing subcommand when the
/// file is simply missing.
fn require<T>(
    result: Result<T, persist::PersistError>,
    stage: &str,
    producer: &str,
) -> Result<T, CliError> {
    result.map_err(|e| {
        if let persist::PersistError::Io { ref source, .. } = e {
            if source.kind() == std::io::ErrorKind::NotFound {
                return CliError::Stage {
                    stage: stage.to_string(),
                    detail: format!("{e}; run the {producer} stage first"),
                };
            }
        }
        stage_err(stage, e)
    })
}

// ---------------------------------------------------------------------------
// stage subcommands

fn cmd_ingest(ctx: &Ctx) -> Result<(), CliError> {
    let (data, dropped) = ingest_stage(&ctx.cfg)?;
    let path = ctx.out_dir.join(MIXED_MATRIX);
    persist::write_mixed_matrix(&path, &data).map_err(|e| stage_err("ingest", e))?;
    println!(
        "ingested {}: {} rows ({} dropped), {} numerical + {} encoded categorical variables -> {}",
        ctx.cfg.data.name,
        data.n(),
        dropped,
        data.p1(),
        data.p2(),
        path.display()
    );
    Ok(())
}

fn cmd_factorize(ctx: &Ctx) -> Result<(), CliError> {
    let data = require(
        persist::read_mixed_matrix(&ctx.out_dir.join(MIXED_MATRIX)),
        "factorize",
        "ingest",
    )?;
    ctx.progress("factorizing");
    let (model, final_objective) = factorize_stage(&ctx.cfg, &data)?;
    let path = ctx.out_dir.join(FACTOR_MODEL);
    persist::write_factor_model(&path, &model).map_err(|e| stage_err("factorize", e))?;
    println!(
        "factorized with k = {}: final objective {final_objective} -> {}",
        model.k,
        path.display()
    );
    Ok(())
}

fn cmd_fit_graph(ctx: &Ctx) -> Result<(), CliError> {
    let data = require(
        persist::read_mixed_matrix(&ctx.out_dir.join(MIXED_MATRIX)),
        "fit-graph",
        "ingest",
    )?;
    let model = require(
        persist::read_factor_model(&ctx.out_dir.join(FACTOR_MODEL)),
        "fit-graph",
        "factorize",
    )?;
    ctx.progress("building the similarity tensor");
    let tensor = similarity_stage(&ctx.cfg, &data, &model)?;
    persist::write_similarity(&ctx.out_dir.join(SIMILARITY), &tensor)
        .map_err(|e| stage_err("fit-graph", e))?;
    ctx.progress("fitting edge weights");
    let (theta, trace) = fit_stage(&ctx.cfg, &tensor)?;
    let wpath = ctx.out_dir.join(EDGE_WEIGHTS);
    persist::write_edge_weights(&wpath, &theta, tensor.p)
        .map_err(|e| stage_err("fit-graph", e))?;
    persist::write_fit_trace_csv(&ctx.out_dir.join(FIT_TRACE), &trace)
        .map_err(|e| stage_err("fit-graph", e))?;
    println!(
        "fitted {} edge weights in {} iterations (final log-likelihood {}) -> {}",
        theta.len(),
        trace.iterations(),
        trace.log_likelihood.last().copied().unwrap_or(f64::NAN),
        wpath.display()
    );
    Ok(())
}

fn cmd_embed(ctx: &Ctx) -> Result<(), CliError> {
    let data = require(
        persist::read_mixed_matrix(&ctx.out_dir.join(MIXED_MATRIX)),
        "embed",
        "ingest",
    )?;
    let (theta, p) = require(
        persist::read_edge_weights(&ctx.out_dir.join(EDGE_WEIGHTS)),
        "embed",
        "fit-graph",
    )?;
    if p != data.p() {
        return Err(stage_err(
            "embed",
            format!(
                "edge weights cover {p} variables but the data has {}",
                data.p()
            ),
        ));
    }
    let (basis, embedding) = embed_stage(&ctx.cfg, &data, &theta)?;
    persist::write_spectral_basis(&ctx.out_dir.join(SPECTRAL_BASIS), &basis)
        .map_err(|e| stage_err("embed", e))?;
    let epath = ctx.out_dir.join(EMBEDDING);
    persist::write_embedding_csv(&epath, &embedding.coords)
        .map_err(|e| stage_err("embed", e))?;
    println!(
        "embedded {} observations into {} spectral features -> {}",
        embedding.n(),
        embedding.l(),
        epath.display()
    );
    Ok(())
}

/// Run one method at one cluster count and keep the best restart by cost.
fn best_assignment(
    ctx: &Ctx,
    method: ClusterMethod,
    count: usize,
    se_coords: &ndarray::Array2<f64>,
    pc_coords: &ndarray::Array2<f64>,
    data: &mixspectral::dataset::MixedDataMatrix,
    gower: Option<&ndarray::Array2<f64>>,
    gamma: f64,
) -> Result<ClusterAssignment, CliError> {
    let c = &ctx.cfg.clustering;
    let restarts = match method {
        ClusterMethod::Kmedoid => 1, // deterministic
        _ => c.restarts,
    };
    let mut best: Option<ClusterAssignment> = None;
    for r in 0..restarts {
        let seed = c.seed + r as u64;
        let a = match method {
            ClusterMethod::SeKmeans => kmeans(se_coords, count, seed, c.max_iters),
            ClusterMethod::PcKmeans => kmeans(pc_coords, count, seed, c.max_iters),
            ClusterMethod::Kprototype => kprototype(data, count, gamma, seed),
            ClusterMethod::Kmedoid => {
                kmedoid(gower.expect("gower is built for kmedoid"), count, seed)
            }
        }
        .map_err(|e| stage_err("cluster", e))?;
        if best.as_ref().is_none_or(|b| a.cost < b.cost) {
            best = Some(a);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

fn cmd_cluster(ctx: &Ctx) -> Result<(), CliError> {
    let data = require(
        persist::read_mixed_matrix(&ctx.out_dir.join(MIXED_MATRIX)),
        "cluster",
        "ingest",
    )?;
    let se_coords = require(
        persist::read_embedding_csv(&ctx.out_dir.join(EMBEDDING)),
        "cluster",
        "embed",
    )?;
    let l = se_coords.ncols();
    let pc_coords = pca_features(&data, l)
        .map_err(|e| stage_err("cluster", e))?
        .coords;
    let gamma = ctx
        .cfg
        .clustering
        .gamma
        .unwrap_or_else(|| default_gamma(&data));
    let gower = ctx
        .cfg
        .clustering
        .methods
        .contains(&ClusterMethod::Kmedoid)
        .then(|| gower_dissimilarity(&data));

    let mut written = 0;
    for &method in &ctx.cfg.clustering.methods {
        for &count in &ctx.cfg.clustering.cluster_counts {
            ctx.progress(&format!("clustering {method} at {count} clusters"));
            let a = best_assignment(
                ctx,
                method,
                count,
                &se_coords,
                &pc_coords,
                &data,
                gower.as_ref(),
                gamma,
            )?;
            let name = format!("assignments_{method}_L{count}.csv");
            persist::write_assignments_csv(&ctx.out_dir.join(name), &a.labels)
                .map_err(|e| stage_err("cluster", e))?;
            written += 1;
        }
    }
    println!(
        "wrote {written} assignment files to {}",
        ctx.out_dir.display()
    );
    Ok(())
}

fn cmd_evaluate(ctx: &Ctx) -> Result<(), CliError> {
    let data = require(
        persist::read_mixed_matrix(&ctx.out_dir.join(MIXED_MATRIX)),
        "evaluate",
        "ingest",
    )?;
    let truth = data.labels.clone().ok_or_else(|| {
        stage_err(
            "evaluate",
            "the dataset has no label column, so rand index and entropy are undefined",
        )
    })?;
    let se_coords = require(
        persist::read_embedding_csv(&ctx.out_dir.join(EMBEDDING)),
        "evaluate",
        "embed",
    )?;
    let alpha = covariance_eigenvalues(&se_coords)
        .and_then(|eig| eigen_diffusion(&eig))
        .map_err(|e| stage_err("evaluate", e))?;

    // every assignments_<method>_L<count>.csv in the output directory, in
    // name order so metrics.json is deterministic
    let mut files: Vec<String> = std::fs::read_dir(&ctx.out_dir)
        .map_err(|e| stage_err("evaluate", e))?
        .filter_map(|entry| entry.ok())
        .filter_map(|entry| entry.file_name().into_string().ok())
        .filter(|name| name.starts_with("assignments_") && name.ends_with(".csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(stage_err(
            "evaluate",
            format!(
                "no assignments_*.csv in {}; run the cluster stage first",
                ctx.out_dir.display()
            ),
        ));
    }

    let mut reports = Vec::with_capacity(files.len());
    for name in &files {
        let stem = name
            .strip_prefix("assignments_")
            .and_then(|s| s.strip_suffix(".csv"))
            .expect("filtered on prefix and suffix");
        let Some((method, count)) = stem.rsplit_once("_L") else {
            return Err(stage_err(
                "evaluate",
                format!("cannot parse method and cluster count from {name}"),
            ));
        };
        let count: usize = count
            .parse()
            .map_err(|_| stage_err("evaluate", format!("bad cluster count in {name}")))?;
        let labels = persist::read_assignments_csv(&ctx.out_dir.join(name))
            .map_err(|e| stage_err("evaluate", e))?;
        let assignment = ClusterAssignment {
            labels: labels.clone(),
            cluster_count: labels.iter().max().map_or(1, |&m| (m + 1).max(count)),
            cost: f64::NAN, // not recorded in the artifact; unused here
            empty_clusters: Vec::new(),
        };
        // separability is scored in the spectral feature space the staged
        // flow produced; the full pipeline scores each method in the space
        // it clustered
        reports.push(MetricsReport {
            dataset: ctx.cfg.data.name.clone(),
            method: method.to_string(),
            cluster_count: count,
            feature_count: Some(se_coords.ncols()),
            alpha: Some(alpha),
            separability_j: cluster_separability(&se_coords, &assignment)
                .map_err(|e| stage_err("evaluate", e))?,
            rand_index: rand_index(&truth, &labels).map_err(|e| stage_err("evaluate", e))?,
            entropy: cluster_entropy(&truth, &labels).map_err(|e| stage_err("evaluate", e))?,
        });
    }
    let path = ctx.out_dir.join(METRICS);
    persist::write_json(&path, &reports).map_err(|e| stage_err("evaluate", e))?;
    println!("scored {} assignment files -> {}", reports.len(), path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// pipeline and benchmark

fn cmd_pipeline(ctx: &Ctx) -> Result<(), CliError> {
    ctx.progress(&format!("running the full pipeline for {}", ctx.cfg.data.name));
    let output = run_pipeline(&ctx.cfg)?;
    pipeline::write_outputs(&ctx.out_dir, &output)?;
    if ctx.args.verbose > 0 {
        for t in &output.report.timings {
            eprintln!("[mixspectral] {}: {:.3}s", t.stage, t.seconds);
        }
    }
    println!(
        "pipeline finished for {}: report.json, tables.csv, fig2.csv, fig3.csv, embedding.csv in {}",
        output.report.dataset.name,
        ctx.out_dir.display()
    );
    Ok(())
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchmarkFile {
    /// Dataset config paths, relative to the benchmark file.
    configs: Vec<PathBuf>,
}

fn cmd_benchmark(ctx: &Ctx) -> Result<(), CliError> {
    let args = ctx.args;
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| stage_err("benchmark", format!("{}: {e}", args.config.display())))?;
    let bench: BenchmarkFile = toml::from_str(&text)
        .map_err(|e| stage_err("benchmark", format!("{}: {e}", args.config.display())))?;
    if bench.configs.is_empty() {
        return Err(stage_err("benchmark", "the benchmark file lists no configs"));
    }
    let base = args.config.parent().unwrap_or(Path::new("."));

    for rel in &bench.configs {
        let path = if rel.is_relative() { base.join(rel) } else { rel.clone() };
        let cfg = load_config(&path, args)?;
        let out_dir = args
            .out
            .clone()
            .unwrap_or_else(|| cfg.output.dir.clone())
            .join(&cfg.data.name);
        if args.verbose > 0 {
            eprintln!("[mixspectral] benchmark: {} -> {}", cfg.data.name, out_dir.display());
        }
        let output = run_pipeline(&cfg)?;
        pipeline::write_outputs(&out_dir, &output)?;
        println!(
            "benchmarked {}: tables.csv in {}",
            output.report.dataset.name,
            out_dir.display()
        );
    }
    Ok(())
}
