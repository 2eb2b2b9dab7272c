//! TOML-backed run configuration shared by the pipeline and the CLI.
//!
//! A config file needs only the two input paths; every other key has a
//! documented default. Fields with value 0 (or absent optional fields)
//! mean "derive from the data": latent dimension `k` defaults to half the
//! total variable count, feature count `l` to half the encoded dimension,
//! and the K-prototypes weight `gamma` to Huang's rule of thumb.
//! [`PipelineConfig::validate`] collects *every* violation rather than
//! stopping at the first.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{schema_from_toml_path, ColumnKind, ColumnSchema};
use crate::spectral::EigenvalueOrder;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error("invalid override {arg:?}: {detail}")]
    BadOverride { arg: String, detail: String },
    #[error("configuration is invalid:\n{}", violations.join("\n"))]
    Invalid { violations: Vec<String> },
}

/// The clustering algorithms the benchmark can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusterMethod {
    /// K-means on the spectral embedding — the method under study.
    SeKmeans,
    /// K-means on plain principal-component features.
    PcKmeans,
    /// K-prototypes on the preprocessed mixed data.
    Kprototype,
    /// K-medoids (PAM) on Gower dissimilarities.
    Kmedoid,
}

impl ClusterMethod {
    pub const ALL: [ClusterMethod; 4] = [
        ClusterMethod::SeKmeans,
        ClusterMethod::PcKmeans,
        ClusterMethod::Kprototype,
        ClusterMethod::Kmedoid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClusterMethod::SeKmeans => "se-kmeans",
            ClusterMethod::PcKmeans => "pc-kmeans",
            ClusterMethod::Kprototype => "kprototype",
            ClusterMethod::Kmedoid => "kmedoid",
        }
    }
}

impl fmt::Display for ClusterMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset CSV with a header row.
    pub csv: PathBuf,
    /// Column schema TOML describing kinds, categories, and the label.
    pub schema: PathBuf,
    /// Name used in reports and tables; defaults to the CSV file stem.
    pub name: String,
    /// Keep only the first `max_rows` data rows (before dropping
    /// incomplete ones); 0 keeps everything.
    pub max_rows: usize,
    /// Numerical columns are scaled into `[-beta, beta]`.
    pub beta: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            csv: PathBuf::new(),
            schema: PathBuf::new(),
            name: String::new(),
            max_rows: 0,
            beta: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactorizationSection {
    /// Latent dimension; 0 derives ceil((p1 + p2) / 2) from the schema.
    pub k: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Factors initialize uniformly in (0, init_scale].
    pub init_scale: f64,
}

impl Default for FactorizationSection {
    fn default() -> Self {
        FactorizationSection {
            k: 0,
            learning_rate: 0.005,
            epochs: 200,
            seed: 17,
            init_scale: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilaritySection {
    /// Truncation threshold of the similarity ratio; must lie in (0, beta).
    pub epsilon: f64,
}

impl Default for SimilaritySection {
    fn default() -> Self {
        SimilaritySection { epsilon: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Ascent stops once the gradient infinity norm drops below this.
    pub tolerance: f64,
    /// Random-initialization scale; must be positive (zero would start at
    /// a stationary point and never move).
    pub init_scale: f64,
    pub seed: u64,
    /// Optional L2 penalty; 0 disables it.
    pub l2: f64,
    pub backtracking: bool,
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection {
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    /// Number of spectral features; 0 derives ceil(p / 2).
    pub l: usize,
    /// Which end of the Laplacian spectrum supplies the leading features.
    pub order: EigenvalueOrder,
    /// Skip zero-eigenvalue (constant) directions before counting `l`.
    pub drop_constant: bool,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        EmbeddingSection {
            l: 0,
            order: EigenvalueOrder::Ascending,
            drop_constant: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringSection {
    /// The L values evaluated in the benchmark tables.
    pub cluster_counts: Vec<usize>,
    pub methods: Vec<ClusterMethod>,
    /// Independent K-means/K-prototypes runs per cell; table cells report
    /// mean ± std across them.
    pub restarts: usize,
    pub seed: u64,
    /// K-prototypes trade-off weight; absent derives Huang's rule
    /// (half the mean numerical-column standard deviation).
    pub gamma: Option<f64>,
    pub max_iters: usize,
}

impl Default for ClusteringSection {
    fn default() -> Self {
        ClusteringSection {
            cluster_counts: vec![2, 5, 10],
            methods: ClusterMethod::ALL.to_vec(),
            restarts: 10,
            seed: 31,
            gamma: None,
            max_iters: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Feature counts for the eigen-diffusion sweep; empty derives 2..=p.
    pub l_grid: Vec<usize>,
    /// Cluster counts for the separability sweep; empty derives 2..=10.
    pub cluster_grid: Vec<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            l_grid: Vec::new(),
            cluster_grid: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
        }
    }
}

/// Full run configuration; see the module docs for the defaulting rules.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: DataConfig,
    pub factorization: FactorizationSection,
    pub similarity: SimilaritySection,
    pub fit: FitSection,
    pub embedding: EmbeddingSection,
    pub clustering: ClusteringSection,
    pub sweeps: SweepSection,
    pub output: OutputSection,
}

/// Variable counts derived from a column schema, before any data is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchemaDims {
    pub p1: usize,
    pub p2: usize,
}

impl SchemaDims {
    pub fn p(&self) -> usize {
        self.p1 + self.p2
    }

    pub fn from_schema(schema: &[ColumnSchema]) -> SchemaDims {
        let p1 = schema
            .iter()
            .filter(|c| !c.label && c.kind == ColumnKind::Numerical)
            .count();
        let p2 = schema
            .iter()
            .filter(|c| !c.label && c.kind == ColumnKind::Categorical)
            .map(|c| c.categories.len())
            .sum();
        SchemaDims { p1, p2 }
    }
}

impl PipelineConfig {
    /// Parse a config file and apply `key.path=value` overrides, without
    /// validating. Overrides address TOML paths (`fit.seed=7`,
    /// `clustering.cluster_counts=[2,3]`); values parse as TOML and fall
    /// back to plain strings.
    pub fn load(path: &Path, overrides: &[String]) -> Result<PipelineConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut value: toml::Value = text.parse().map_err(|e: toml::de::Error| {
            ConfigError::Parse {
                path: path.to_path_buf(),
                detail: e.to_string(),
            }
        })?;
        for arg in overrides {
            apply_override(&mut value, arg)?;
        }
        let mut cfg: PipelineConfig =
            value.try_into().map_err(|e: toml::de::Error| ConfigError::Parse {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })?;
        if cfg.data.name.is_empty() {
            cfg.data.name = cfg
                .data
                .csv
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
        }
        // input paths in a config are relative to the config file
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.data.csv.is_relative() {
            cfg.data.csv = base.join(&cfg.data.csv);
        }
        if cfg.data.schema.is_relative() {
            cfg.data.schema = base.join(&cfg.data.schema);
        }
        Ok(cfg)
    }

    /// Check every invariant and return the complete list of violations.
    /// Reads the schema file to derive the variable counts that the `k` and
    /// `l` bounds depend on.
    pub fn validate(&self) -> Result<SchemaDims, ConfigError> {
        let mut violations = Vec::new();

        if self.data.csv.as_os_str().is_empty() {
            violations.push("data.csv: path is required".to_string());
        } else if !self.data.csv.exists() {
            violations.push(format!("data.csv: {} does not exist", self.data.csv.display()));
        }

        let mut dims = None;
        if self.data.schema.as_os_str().is_empty() {
            violations.push("data.schema: path is required".to_string());
        } else {
            match schema_from_toml_path(&self.data.schema) {
                Ok(schema) => dims = Some(SchemaDims::from_schema(&schema)),
                Err(e) => violations.push(format!("data.schema: {e}")),
            }
        }

        if !(self.data.beta.is_finite() && self.data.beta > 0.0) {
            violations.push(format!("data.beta: must be positive, got {}", self.data.beta));
        }
        if !(self.similarity.epsilon > 0.0 && self.similarity.epsilon < self.data.beta) {
            violations.push(format!(
                "similarity.epsilon: must lie strictly between 0 and beta ({}), got {}",
                self.data.beta, self.similarity.epsilon
            ));
        }

        if !(self.factorization.learning_rate.is_finite() && self.factorization.learning_rate > 0.0)
        {
            violations.push(format!(
                "factorization.learning_rate: must be positive, got {}",
                self.factorization.learning_rate
            ));
        }
        if self.factorization.epochs == 0 {
            violations.push("factorization.epochs: must be at least 1".to_string());
        }
        if !(self.factorization.init_scale.is_finite() && self.factorization.init_scale > 0.0) {
            violations.push(format!(
                "factorization.init_scale: must be positive, got {}",
                self.factorization.init_scale
            ));
        }
        if let Some(dims) = dims {
            if self.factorization.k != 0 && self.factorization.k >= dims.p() {
                violations.push(format!(
                    "factorization.k: the shared latent dimension must stay below p1 + p2 = {} \
                     for the factorization to compress; got {}",
                    dims.p(),
                    self.factorization.k
                ));
            }
            let (max_l, max_l_note) = if self.embedding.drop_constant {
                (dims.p() - 1, " (p minus the dropped constant eigenvector)")
            } else {
                (dims.p(), "")
            };
            if self.embedding.l > max_l {
                violations.push(format!(
                    "embedding.l: at most {max_l}{max_l_note} features exist, got {}",
                    self.embedding.l
                ));
            }
            for &l in &self.sweeps.l_grid {
                if l == 0 || l > max_l {
                    violations.push(format!(
                        "sweeps.l_grid: every entry must lie in 1..={max_l}{max_l_note}, got {l}"
                    ));
                    break;
                }
            }
        }

        if !(self.fit.learning_rate.is_finite() && self.fit.learning_rate > 0.0) {
            violations.push(format!(
                "fit.learning_rate: must be positive, got {}",
                self.fit.learning_rate
            ));
        }
        if self.fit.max_iters == 0 {
            violations.push("fit.max_iters: must be at least 1".to_string());
        }
        if !(self.fit.tolerance.is_finite() && self.fit.tolerance > 0.0) {
            violations.push(format!(
                "fit.tolerance: must be positive, got {}",
                self.fit.tolerance
            ));
        }
        if !(self.fit.init_scale.is_finite() && self.fit.init_scale > 0.0) {
            violations.push(format!(
                "fit.init_scale: must be positive (zero starts at a stationary point), got {}",
                self.fit.init_scale
            ));
        }
        if !(self.fit.l2.is_finite() && self.fit.l2 >= 0.0) {
            violations.push(format!("fit.l2: must be nonnegative, got {}", self.fit.l2));
        }

        if self.clustering.cluster_counts.is_empty() {
            violations.push("clustering.cluster_counts: at least one L is required".to_string());
        }
        if self.clustering.cluster_counts.iter().any(|&l| l == 0) {
            violations.push("clustering.cluster_counts: cluster counts start at 1".to_string());
        }
        if self.clustering.methods.is_empty() {
            violations.push("clustering.methods: at least one method is required".to_string());
        }
        if self.clustering.restarts == 0 {
            violations.push("clustering.restarts: must be at least 1".to_string());
        }
        if self.clustering.max_iters == 0 {
            violations.push("clustering.max_iters: must be at least 1".to_string());
        }
        if let Some(gamma) = self.clustering.gamma {
            if !(gamma.is_finite() && gamma >= 0.0) {
                violations.push(format!(
                    "clustering.gamma: must be nonnegative, got {gamma}"
                ));
            }
        }

        match dims {
            Some(dims) if violations.is_empty() => Ok(dims),
            _ => Err(ConfigError::Invalid { violations }),
        }
    }

    /// The latent dimension to use: configured value, or half the total
    /// variable count rounded up.
    pub fn resolved_k(&self, dims: SchemaDims) -> usize {
        if self.factorization.k != 0 {
            self.factorization.k
        } else {
            dims.p().div_ceil(2)
        }
    }

    /// The feature count to use: configured value, or half the encoded
    /// dimension rounded up.
    pub fn resolved_l(&self, dims: SchemaDims) -> usize {
        if self.embedding.l != 0 {
            self.embedding.l
        } else {
            dims.p().div_ceil(2)
        }
    }

    /// The eigen-diffusion sweep grid: configured, or 2 up to the number of
    /// available features (p, less one when the constant eigenvector is
    /// dropped).
    pub fn resolved_l_grid(&self, dims: SchemaDims) -> Vec<usize> {
        if self.sweeps.l_grid.is_empty() {
            (2..=dims.p() - self.embedding.drop_constant as usize).collect()
        } else {
            self.sweeps.l_grid.clone()
        }
    }

    /// The separability sweep grid: configured, or 2..=10.
    pub fn resolved_cluster_grid(&self) -> Vec<usize> {
        if self.sweeps.cluster_grid.is_empty() {
            (2..=10).collect()
        } else {
            self.sweeps.cluster_grid.clone()
        }
    }

    /// Copy with the derived values filled in, as echoed into reports so a
    /// run can be reproduced from its own output.
    pub fn resolved(&self, dims: SchemaDims, gamma: f64) -> PipelineConfig {
        let mut cfg = self.clone();
        cfg.factorization.k = self.resolved_k(dims);
        cfg.embedding.l = self.resolved_l(dims);
        cfg.sweeps.l_grid = self.resolved_l_grid(dims);
        cfg.sweeps.cluster_grid = self.resolved_cluster_grid();
        cfg.clustering.gamma = Some(gamma);
        cfg
    }
}

/// Apply one `dotted.path=value` override to a parsed TOML document.
fn apply_override(root: &mut toml::Value, arg: &str) -> Result<(), ConfigError> {
    let Some((path, raw_value)) = arg.split_once('=') else {
        return Err(ConfigError::BadOverride {
            arg: arg.to_string(),
            detail: "expected key.path=value".to_string(),
        });
    };
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(ConfigError::BadOverride {
            arg: arg.to_string(),
            detail: "empty path segment".to_string(),
        });
    }

    // parse the value as TOML; fall back to a bare string
    let parsed: toml::Value = format!("v = {raw_value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw_value.to_string()));

    let mut node = root;
    for segment in &segments[..segments.len() - 1] {
        node = node
            .as_table_mut()
            .ok_or_else(|| ConfigError::BadOverride {
                arg: arg.to_string(),
                detail: format!("{segment} is not a table"),
            })?
            .entry(segment.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let last = segments[segments.len() - 1];
    node.as_table_mut()
        .ok_or_else(|| ConfigError::BadOverride {
            arg: arg.to_string(),
            detail: format!("{last}'s parent is not a table"),
        })?
        .insert(last.to_string(), parsed);
    Ok(())
}
