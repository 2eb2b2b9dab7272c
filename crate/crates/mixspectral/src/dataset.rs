//! Dataset ingestion: CSV loading against a declared schema, ±1 one-hot
//! encoding of categorical variables, and min-max scaling of numerical
//! variables into `[-beta, beta]`.
//!
//! The output of this module is a [`MixedDataMatrix`]: the n×p1 numerical
//! block followed (in variable-index order) by the n×p2 categorical block,
//! where each original categorical column with m levels occupies m boolean
//! columns valued +1 for the observed level and −1 otherwise. Downstream
//! modules index variables 0..p1 for numerical and p1..p1+p2 for categorical.
//!
//! Rows containing missing cells (`?` or empty) are dropped and counted; the
//! drop count travels with the table so reports can state it.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Deserialize;
use thiserror::Error;

/// Missing-value sentinel accepted in any cell (alongside the empty string).
pub const MISSING: &str = "?";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("file not found: {path}")]
    FileNotFound { path: PathBuf },
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("schema mismatch: {detail}")]
    SchemaMismatch { detail: String },
    #[error("no complete rows remain after dropping {dropped} incomplete rows")]
    EmptyAfterDrop { dropped: usize },
    #[error("unknown category {value:?} in column {column:?} (data row {row})")]
    UnknownCategory {
        column: String,
        value: String,
        row: usize,
    },
    #[error("numerical column {column:?} is constant ({value}); cannot scale it to [-beta, beta]")]
    ConstantColumn { column: String, value: f64 },
    #[error("invalid schema: {detail}")]
    InvalidSchema { detail: String },
    #[error(
        "degenerate data shape: need n >= 2 rows, >= 1 numerical and >= 1 categorical \
         feature column, got n={n}, p1={p1}, p2={p2}"
    )]
    DegenerateShape { n: usize, p1: usize, p2: usize },
    #[error("scale bound beta must be positive and finite, got {beta}")]
    InvalidBeta { beta: f64 },
}

/// Declared type of one raw CSV column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Numerical,
    Categorical,
}

/// Schema entry for one column of the raw CSV.
///
/// `categories` is the ordered list of admissible levels for categorical
/// columns (it fixes the one-hot expansion order) and must be empty for
/// numerical columns. At most one column may set `label`; that column is
/// excluded from the feature blocks and surfaces as ground-truth class ids.
#[derive(Debug, Clone)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    pub categories: Vec<String>,
    pub label: bool,
}

impl ColumnSchema {
    pub fn numerical(name: impl Into<String>) -> Self {
        ColumnSchema {
            name: name.into(),
            kind: ColumnKind::Numerical,
            categories: Vec::new(),
            label: false,
        }
    }

    pub fn categorical(name: impl Into<String>, categories: &[&str]) -> Self {
        ColumnSchema {
            name: name.into(),
            kind: ColumnKind::Categorical,
            categories: categories.iter().map(|c| c.to_string()).collect(),
            label: false,
        }
    }

    pub fn label(name: impl Into<String>) -> Self {
        ColumnSchema {
            name: name.into(),
            kind: ColumnKind::Categorical,
            categories: Vec::new(),
            label: true,
        }
    }
}

/// One typed CSV cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Number(f64),
    Text(String),
}

/// Typed rows that survived missing-value dropping, plus the drop count.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub dropped_rows: usize,
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Keep only the first `cap` complete rows (used for the large-dataset
    /// row cap). A cap of `None` keeps everything.
    pub fn truncated(mut self, cap: Option<usize>) -> RawTable {
        if let Some(cap) = cap {
            self.rows.truncate(cap);
        }
        self
    }
}

/// Encoded but not yet scaled feature blocks.
#[derive(Debug, Clone)]
pub struct UnscaledMatrix {
    pub num_block: Array2<f64>,
    pub cat_block: Array2<f64>,
    /// Numerical column names followed by expanded categorical names
    /// (`column=level`), in variable-index order.
    pub column_names: Vec<String>,
    /// Level count of each original categorical column, in schema order;
    /// sums to the categorical block width. Lets consumers that need
    /// whole-variable granularity (mismatch counts, modes) undo the
    /// one-hot expansion.
    pub cat_group_sizes: Vec<usize>,
    pub labels: Option<Vec<String>>,
}

/// Fully preprocessed observations: numerical block scaled into
/// `[-beta, beta]`, categorical block in `{-1, +1}`.
#[derive(Debug, Clone)]
pub struct MixedDataMatrix {
    pub num_block: Array2<f64>,
    pub cat_block: Array2<f64>,
    pub column_names: Vec<String>,
    /// Level count of each original categorical column (see
    /// [`UnscaledMatrix::cat_group_sizes`]).
    pub cat_group_sizes: Vec<usize>,
    pub labels: Option<Vec<String>>,
    pub beta: f64,
}

impl MixedDataMatrix {
    pub fn n(&self) -> usize {
        self.num_block.nrows()
    }

    /// Count of numerical variables.
    pub fn p1(&self) -> usize {
        self.num_block.ncols()
    }

    /// Count of expanded categorical variables.
    pub fn p2(&self) -> usize {
        self.cat_block.ncols()
    }

    /// Total variable count `p1 + p2`.
    pub fn p(&self) -> usize {
        self.p1() + self.p2()
    }

    /// Value of variable `var` (numerical first, then categorical) for row `i`.
    pub fn value(&self, i: usize, var: usize) -> f64 {
        let p1 = self.p1();
        if var < p1 {
            self.num_block[[i, var]]
        } else {
            self.cat_block[[i, var - p1]]
        }
    }

    /// Start offset of each categorical group within the categorical block.
    pub fn cat_group_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.cat_group_sizes.len());
        let mut acc = 0;
        for &size in &self.cat_group_sizes {
            offsets.push(acc);
            acc += size;
        }
        offsets
    }

    /// Original level index of categorical variable `group` for row `i`:
    /// the position of the lone `+1` inside that group's one-hot columns.
    pub fn cat_level(&self, i: usize, group: usize, offset: usize) -> usize {
        let size = self.cat_group_sizes[group];
        for j in 0..size {
            if self.cat_block[[i, offset + j]] > 0.0 {
                return j;
            }
        }
        // encode() writes exactly one +1 per group, so this is unreachable
        // for matrices it produced.
        size
    }

    /// The full n×p matrix: numerical block columns then categorical block
    /// columns, the "signal on the variable graph" fed to the feature map.
    pub fn full_matrix(&self) -> Array2<f64> {
        let n = self.n();
        let (p1, p2) = (self.p1(), self.p2());
        let mut full = Array2::zeros((n, p1 + p2));
        full.slice_mut(ndarray::s![.., ..p1]).assign(&self.num_block);
        full.slice_mut(ndarray::s![.., p1..]).assign(&self.cat_block);
        full
    }
}

/// Per-column affine parameters used by [`scale`], kept so the same map can
/// be reported or re-applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingParams {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
    pub beta: f64,
}

/// Check schema-level invariants: unique names, categorical feature columns
/// with at least two levels, at most one label column, at least one column.
pub fn validate_schema(schema: &[ColumnSchema]) -> Result<(), DatasetError> {
    if schema.is_empty() {
        return Err(DatasetError::InvalidSchema {
            detail: "schema has no columns".into(),
        });
    }
    let mut seen = std::collections::HashSet::new();
    let mut labels = 0usize;
    for col in schema {
        if !seen.insert(col.name.as_str()) {
            return Err(DatasetError::InvalidSchema {
                detail: format!("duplicate column name {:?}", col.name),
            });
        }
        if col.label {
            labels += 1;
            continue;
        }
        match col.kind {
            ColumnKind::Numerical => {
                if !col.categories.is_empty() {
                    return Err(DatasetError::InvalidSchema {
                        detail: format!("numerical column {:?} lists categories", col.name),
                    });
                }
            }
            ColumnKind::Categorical => {
                if col.categories.len() < 2 {
                    return Err(DatasetError::InvalidSchema {
                        detail: format!(
                            "categorical column {:?} needs >= 2 categories, has {}",
                            col.name,
                            col.categories.len()
                        ),
                    });
                }
                let mut cats = std::collections::HashSet::new();
                for c in &col.categories {
                    if !cats.insert(c.as_str()) {
                        return Err(DatasetError::InvalidSchema {
                            detail: format!(
                                "categorical column {:?} repeats category {:?}",
                                col.name, c
                            ),
                        });
                    }
                }
            }
        }
    }
    if labels > 1 {
        return Err(DatasetError::InvalidSchema {
            detail: format!("{labels} columns flagged as label; at most one allowed"),
        });
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct SchemaFile {
    #[serde(rename = "column")]
    columns: Vec<SchemaFileColumn>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaFileColumn {
    name: String,
    kind: Option<String>,
    #[serde(default)]
    categories: Vec<String>,
    #[serde(default)]
    label: bool,
}

/// Load a column schema from its TOML file.
///
/// The format is an array of `[[column]]` tables with keys `name`,
/// `kind` (`"numerical"` or `"categorical"`), `categories` (required for
/// categorical feature columns), and `label` (marks the ground-truth class
/// column, which needs no `kind`).
pub fn schema_from_toml_path(path: &Path) -> Result<Vec<ColumnSchema>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            DatasetError::FileNotFound { path: path.into() }
        } else {
            DatasetError::Io {
                path: path.into(),
                source,
            }
        }
    })?;
    let parsed: SchemaFile = toml::from_str(&text).map_err(|e| DatasetError::InvalidSchema {
        detail: format!("{path:?}: {e}"),
    })?;
    let mut schema = Vec::with_capacity(parsed.columns.len());
    for col in parsed.columns {
        let kind = match (col.label, col.kind.as_deref()) {
            (true, _) | (false, Some("categorical")) => ColumnKind::Categorical,
            (false, Some("numerical")) => ColumnKind::Numerical,
            (false, Some(other)) => {
                return Err(DatasetError::InvalidSchema {
                    detail: format!(
                        "column {:?}: unknown kind {:?} (expected \"numerical\" or \"categorical\")",
                        col.name, other
                    ),
                })
            }
            (false, None) => {
                return Err(DatasetError::InvalidSchema {
                    detail: format!("column {:?} is missing its kind", col.name),
                })
            }
        };
        schema.push(ColumnSchema {
            name: col.name,
            kind,
            categories: col.categories,
            label: col.label,
        });
    }
    validate_schema(&schema)?;
    Ok(schema)
}

/// Read an RFC-4180 CSV with a header row, type every cell per the schema,
/// and drop rows containing missing cells (`?` or empty).
///
/// The header must match the schema's column names in order.
pub fn load_csv(path: &Path, schema: &[ColumnSchema]) -> Result<RawTable, DatasetError> {
    validate_schema(schema)?;
    let file = std::fs::File::open(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            DatasetError::FileNotFound { path: path.into() }
        } else {
            DatasetError::Io {
                path: path.into(),
                source,
            }
        }
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(std::io::BufReader::new(file));

    let io_err = |source: csv::Error| DatasetError::SchemaMismatch {
        detail: format!("{path:?}: {source}"),
    };
    let header = reader.headers().map_err(io_err)?.clone();
    if header.len() != schema.len() {
        return Err(DatasetError::SchemaMismatch {
            detail: format!(
                "{path:?}: header has {} columns, schema declares {}",
                header.len(),
                schema.len()
            ),
        });
    }
    for (got, want) in header.iter().zip(schema) {
        if got != want.name {
            return Err(DatasetError::SchemaMismatch {
                detail: format!(
                    "{path:?}: header column {:?} does not match schema column {:?}",
                    got, want.name
                ),
            });
        }
    }

    let mut rows = Vec::new();
    let mut dropped = 0usize;
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(io_err)?;
        if record.len() != schema.len() {
            return Err(DatasetError::SchemaMismatch {
                detail: format!(
                    "{path:?}: data row {} has {} cells, expected {}",
                    row_idx + 1,
                    record.len(),
                    schema.len()
                ),
            });
        }
        if record.iter().any(|cell| cell == MISSING || cell.is_empty()) {
            dropped += 1;
            continue;
        }
        let mut cells = Vec::with_capacity(schema.len());
        for (cell, col) in record.iter().zip(schema) {
            if col.label {
                cells.push(Cell::Text(cell.to_string()));
                continue;
            }
            match col.kind {
                ColumnKind::Numerical => {
                    let value: f64 = cell.parse().map_err(|_| DatasetError::SchemaMismatch {
                        detail: format!(
                            "{path:?}: data row {}, column {:?}: {:?} is not a number",
                            row_idx + 1,
                            col.name,
                            cell
                        ),
                    })?;
                    cells.push(Cell::Number(value));
                }
                ColumnKind::Categorical => cells.push(Cell::Text(cell.to_string())),
            }
        }
        rows.push(cells);
    }

    if rows.is_empty() {
        return Err(DatasetError::EmptyAfterDrop { dropped });
    }
    Ok(RawTable {
        columns: schema.iter().map(|c| c.name.clone()).collect(),
        rows,
        dropped_rows: dropped,
    })
}

/// Expand categorical columns to ±1 one-hot blocks and split off the label
/// column.
///
/// Numerical variables keep their raw values (scaling happens in [`scale`]);
/// a categorical column with m levels becomes m columns named
/// `column=level`, +1 where the level is observed and −1 elsewhere.
pub fn encode(raw: &RawTable, schema: &[ColumnSchema]) -> Result<UnscaledMatrix, DatasetError> {
    validate_schema(schema)?;
    if raw.columns.len() != schema.len() {
        return Err(DatasetError::SchemaMismatch {
            detail: format!(
                "table has {} columns, schema declares {}",
                raw.columns.len(),
                schema.len()
            ),
        });
    }

    let n = raw.rows.len();
    let p1 = schema
        .iter()
        .filter(|c| !c.label && c.kind == ColumnKind::Numerical)
        .count();
    let p2: usize = schema
        .iter()
        .filter(|c| !c.label && c.kind == ColumnKind::Categorical)
        .map(|c| c.categories.len())
        .sum();

    let mut num_block = Array2::<f64>::zeros((n, p1));
    let mut cat_block = Array2::<f64>::from_elem((n, p2), -1.0);
    let mut labels: Option<Vec<String>> = None;

    for (i, row) in raw.rows.iter().enumerate() {
        let mut num_j = 0usize;
        let mut cat_j = 0usize;
        for (cell, col) in row.iter().zip(schema) {
            if col.label {
                let value = match cell {
                    Cell::Text(s) => s.clone(),
                    Cell::Number(x) => x.to_string(),
                };
                labels.get_or_insert_with(|| Vec::with_capacity(n)).push(value);
                continue;
            }
            match col.kind {
                ColumnKind::Numerical => {
                    let Cell::Number(x) = cell else {
                        return Err(DatasetError::SchemaMismatch {
                            detail: format!(
                                "column {:?} declared numerical but holds text",
                                col.name
                            ),
                        });
                    };
                    num_block[[i, num_j]] = *x;
                    num_j += 1;
                }
                ColumnKind::Categorical => {
                    let Cell::Text(s) = cell else {
                        return Err(DatasetError::SchemaMismatch {
                            detail: format!(
                                "column {:?} declared categorical but holds a number",
                                col.name
                            ),
                        });
                    };
                    let Some(level) = col.categories.iter().position(|c| c == s) else {
                        return Err(DatasetError::UnknownCategory {
                            column: col.name.clone(),
                            value: s.clone(),
                            row: i + 1,
                        });
                    };
                    cat_block[[i, cat_j + level]] = 1.0;
                    cat_j += col.categories.len();
                }
            }
        }
    }

    let mut column_names = Vec::with_capacity(p1 + p2);
    for col in schema.iter().filter(|c| !c.label) {
        match col.kind {
            ColumnKind::Numerical => column_names.push(col.name.clone()),
            ColumnKind::Categorical => {
                for cat in &col.categories {
                    column_names.push(format!("{}={}", col.name, cat));
                }
            }
        }
    }

    let cat_group_sizes = schema
        .iter()
        .filter(|c| !c.label && c.kind == ColumnKind::Categorical)
        .map(|c| c.categories.len())
        .collect();

    Ok(UnscaledMatrix {
        num_block,
        cat_block,
        column_names,
        cat_group_sizes,
        labels,
    })
}

/// Affinely map every numerical column onto exactly `[-beta, beta]`
/// (`x' = 2*beta*(x - min)/(max - min) - beta`); the categorical block passes
/// through untouched.
pub fn scale(
    matrix: &UnscaledMatrix,
    beta: f64,
) -> Result<(MixedDataMatrix, ScalingParams), DatasetError> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(DatasetError::InvalidBeta { beta });
    }
    let n = matrix.num_block.nrows();
    let p1 = matrix.num_block.ncols();
    let p2 = matrix.cat_block.ncols();
    if n < 2 || p1 == 0 || p2 == 0 {
        return Err(DatasetError::DegenerateShape { n, p1, p2 });
    }

    let mut num_block = matrix.num_block.clone();
    let mut mins = Vec::with_capacity(p1);
    let mut maxs = Vec::with_capacity(p1);
    for (j, mut col) in num_block.columns_mut().into_iter().enumerate() {
        let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(max > min) {
            return Err(DatasetError::ConstantColumn {
                column: matrix.column_names[j].clone(),
                value: min,
            });
        }
        let range = max - min;
        col.mapv_inplace(|x| 2.0 * beta * ((x - min) / range) - beta);
        mins.push(min);
        maxs.push(max);
    }

    Ok((
        MixedDataMatrix {
            num_block,
            cat_block: matrix.cat_block.clone(),
            column_names: matrix.column_names.clone(),
            cat_group_sizes: matrix.cat_group_sizes.clone(),
            labels: matrix.labels.clone(),
            beta,
        },
        ScalingParams { mins, maxs, beta },
    ))
}

/// Convenience composition: load, (optionally cap), encode, scale.
pub fn ingest(
    csv_path: &Path,
    schema: &[ColumnSchema],
    beta: f64,
    max_rows: Option<usize>,
) -> Result<(MixedDataMatrix, ScalingParams, usize), DatasetError> {
    let raw = load_csv(csv_path, schema)?.truncated(max_rows);
    let dropped = raw.dropped_rows;
    let unscaled = encode(&raw, schema)?;
    let (data, params) = scale(&unscaled, beta)?;
    Ok((data, params, dropped))
}
