//! Plain-text serialization of stage artifacts.
//!
//! Every stage boundary has a reader and a writer so a run can be split
//! across processes: the preprocessed matrix, the factor model, the
//! similarity tensor, the fitted edge weights, the spectral basis, and the
//! embedding. Floats are written with Rust's shortest round-trip `Display`
//! and parsed back bit-identically, so a reloaded artifact continues the
//! pipeline with exactly the results of an in-memory run.
//!
//! All writes go through [`write_atomic`]: content lands in a temp file in
//! the destination directory and is renamed into place, so a crash never
//! leaves a half-written artifact.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use thiserror::Error;

use crate::dataset::MixedDataMatrix;
use crate::factorization::FactorModel;
use crate::similarity::{edge_set, SimilarityTensor};
use crate::spectral::SpectralBasis;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {detail}")]
    Format {
        path: PathBuf,
        line: usize,
        detail: String,
    },
}

impl PersistError {
    fn io(path: &Path, source: std::io::Error) -> PersistError {
        PersistError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn format(path: &Path, line: usize, detail: impl Into<String>) -> PersistError {
        PersistError::Format {
            path: path.to_path_buf(),
            line,
            detail: detail.into(),
        }
    }
}

/// Write `content` to `path` atomically: temp file in the same directory,
/// then rename. Creates parent directories as needed.
pub fn write_atomic(path: &Path, content: &str) -> Result<(), PersistError> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&parent).map_err(|e| PersistError::io(&parent, e))?;
    let mut tmp =
        tempfile::NamedTempFile::new_in(&parent).map_err(|e| PersistError::io(path, e))?;
    std::io::Write::write_all(&mut tmp, content.as_bytes())
        .map_err(|e| PersistError::io(path, e))?;
    tmp.persist(path)
        .map_err(|e| PersistError::io(path, e.error))?;
    Ok(())
}

/// Serialize any JSON-able value prettily and write it atomically.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), PersistError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| {
        PersistError::io(path, std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    })?;
    write_atomic(path, &(text + "\n"))
}

struct Lines<'a> {
    path: &'a Path,
    lines: std::str::Lines<'a>,
    line_no: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str, PersistError> {
        self.line_no += 1;
        self.lines
            .next()
            .ok_or_else(|| PersistError::format(self.path, self.line_no, "unexpected end of file"))
    }
}

fn read_lines<'a>(path: &'a Path, text: &'a str) -> Lines<'a> {
    Lines {
        path,
        lines: text.lines(),
        line_no: 0,
    }
}

fn read_to_string(path: &Path) -> Result<String, PersistError> {
    std::fs::read_to_string(path).map_err(|e| PersistError::io(path, e))
}

fn expect_tag(lines: &mut Lines, tag: &str) -> Result<(), PersistError> {
    let line = lines.next()?;
    if line != tag {
        return Err(PersistError::format(
            lines.path,
            lines.line_no,
            format!("expected header {tag:?}, found {line:?}"),
        ));
    }
    Ok(())
}

fn parse_f64(lines: &Lines, token: &str) -> Result<f64, PersistError> {
    token.parse().map_err(|_| {
        PersistError::format(lines.path, lines.line_no, format!("bad float {token:?}"))
    })
}

fn parse_usize(lines: &Lines, token: &str) -> Result<usize, PersistError> {
    token.parse().map_err(|_| {
        PersistError::format(lines.path, lines.line_no, format!("bad count {token:?}"))
    })
}

/// Parse a line of `key value key value ...` pairs, checking key names.
fn keyed_counts(lines: &mut Lines, keys: &[&str]) -> Result<Vec<usize>, PersistError> {
    let line = lines.next()?;
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.len() != keys.len() * 2 {
        return Err(PersistError::format(
            lines.path,
            lines.line_no,
            format!("expected {keys:?} pairs, found {line:?}"),
        ));
    }
    let mut out = Vec::with_capacity(keys.len());
    for (i, key) in keys.iter().enumerate() {
        if tokens[2 * i] != *key {
            return Err(PersistError::format(
                lines.path,
                lines.line_no,
                format!("expected key {key:?}, found {:?}", tokens[2 * i]),
            ));
        }
        out.push(parse_usize(lines, tokens[2 * i + 1])?);
    }
    Ok(out)
}

fn float_row(lines: &mut Lines, expected: usize) -> Result<Vec<f64>, PersistError> {
    let line = lines.next()?;
    let values: Vec<f64> = line
        .split_whitespace()
        .map(|t| parse_f64(lines, t))
        .collect::<Result<_, _>>()?;
    if values.len() != expected {
        return Err(PersistError::format(
            lines.path,
            lines.line_no,
            format!("expected {expected} values, found {}", values.len()),
        ));
    }
    Ok(values)
}

fn push_float_row(out: &mut String, row: ndarray::ArrayView1<f64>) {
    for (j, v) in row.iter().enumerate() {
        if j > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v}");
    }
    out.push('\n');
}

fn read_matrix(lines: &mut Lines, rows: usize, cols: usize) -> Result<Array2<f64>, PersistError> {
    let mut flat = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        flat.extend(float_row(lines, cols)?);
    }
    Ok(Array2::from_shape_vec((rows, cols), flat).expect("rows × cols entries were just read"))
}

// ---------------------------------------------------------------------------
// mixed data matrix

const MIXED_TAG: &str = "mixspectral mixed-matrix v1";

/// Write the preprocessed matrix: dimensions, scaling bound, categorical
/// group sizes, column names, optional labels, then one row per observation
/// (tab-separated, label last).
pub fn write_mixed_matrix(path: &Path, data: &MixedDataMatrix) -> Result<(), PersistError> {
    let (n, p1, p2) = (data.n(), data.p1(), data.p2());
    let mut out = String::new();
    let _ = writeln!(out, "{MIXED_TAG}");
    let _ = writeln!(out, "n {n} p1 {p1} p2 {p2}");
    let _ = writeln!(out, "beta {}", data.beta);
    out.push_str("groups");
    for g in &data.cat_group_sizes {
        let _ = write!(out, " {g}");
    }
    out.push('\n');
    let _ = writeln!(out, "columns\t{}", data.column_names.join("\t"));
    let _ = writeln!(out, "labels {}", if data.labels.is_some() { 1 } else { 0 });
    for i in 0..n {
        for j in 0..p1 {
            if j > 0 {
                out.push('\t');
            }
            let _ = write!(out, "{}", data.num_block[[i, j]]);
        }
        for j in 0..p2 {
            if p1 > 0 || j > 0 {
                out.push('\t');
            }
            let _ = write!(out, "{}", data.cat_block[[i, j]]);
        }
        if let Some(labels) = &data.labels {
            let _ = write!(out, "\t{}", labels[i]);
        }
        out.push('\n');
    }
    write_atomic(path, &out)
}

pub fn read_mixed_matrix(path: &Path) -> Result<MixedDataMatrix, PersistError> {
    let text = read_to_string(path)?;
    let mut lines = read_lines(path, &text);
    expect_tag(&mut lines, MIXED_TAG)?;
    let dims = keyed_counts(&mut lines, &["n", "p1", "p2"])?;
    let (n, p1, p2) = (dims[0], dims[1], dims[2]);

    let beta_line = lines.next()?;
    let beta = match beta_line.strip_prefix("beta ") {
        Some(tok) => parse_f64(&lines, tok)?,
        None => {
            return Err(PersistError::format(
                lines.path,
                lines.line_no,
                format!("expected beta line, found {beta_line:?}"),
            ))
        }
    };

    let groups_line = lines.next()?;
    let Some(rest) = groups_line.strip_prefix("groups") else {
        return Err(PersistError::format(
            lines.path,
            lines.line_no,
            format!("expected groups line, found {groups_line:?}"),
        ));
    };
    let cat_group_sizes: Vec<usize> = rest
        .split_whitespace()
        .map(|t| parse_usize(&lines, t))
        .collect::<Result<_, _>>()?;
    if cat_group_sizes.iter().sum::<usize>() != p2 {
        return Err(PersistError::format(
            lines.path,
            lines.line_no,
            format!("group sizes sum to {}, expected p2 = {p2}", {
                cat_group_sizes.iter().sum::<usize>()
            }),
        ));
    }

    let columns_line = lines.next()?;
    let mut column_names: Vec<String> =
        columns_line.split('\t').map(str::to_string).collect();
    if column_names.first().map(String::as_str) != Some("columns") {
        return Err(PersistError::format(
            lines.path,
            lines.line_no,
            format!("expected columns line, found {columns_line:?}"),
        ));
    }
    column_names.remove(0);
    if column_names.len() != p1 + p2 {
        return Err(PersistError::format(
            lines.path,
            lines.line_no,
            format!(
                "expected {} column names, found {}",
                p1 + p2,
                column_names.len()
            ),
        ));
    }

    let labels_line = lines.next()?;
    let has_labels = match labels_line {
        "labels 1" => true,
        "labels 0" => false,
        other => {
            return Err(PersistError::format(
                lines.path,
                lines.line_no,
                format!("expected labels 0|1, found {other:?}"),
            ))
        }
    };

    let mut num_flat = Vec::with_capacity(n * p1);
    let mut cat_flat = Vec::with_capacity(n * p2);
    let mut labels = has_labels.then(|| Vec::with_capacity(n));
    for _ in 0..n {
        let row = lines.next()?;
        let fields: Vec<&str> = row.split('\t').collect();
        let expected = p1 + p2 + usize::from(has_labels);
        if fields.len() != expected {
            return Err(PersistError::format(
                lines.path,
                lines.line_no,
                format!("expected {expected} fields, found {}", fields.len()),
            ));
        }
        for tok in &fields[..p1] {
            num_flat.push(parse_f64(&lines, tok)?);
        }
        for tok in &fields[p1..p1 + p2] {
            cat_flat.push(parse_f64(&lines, tok)?);
        }
        if let Some(labels) = labels.as_mut() {
            labels.push(fields[p1 + p2].to_string());
        }
    }

    Ok(MixedDataMatrix {
        num_block: Array2::from_shape_vec((n, p1), num_flat).expect("n × p1 entries"),
        cat_block: Array2::from_shape_vec((n, p2), cat_flat).expect("n × p2 entries"),
        column_names,
        cat_group_sizes,
        labels,
        beta,
    })
}

// ---------------------------------------------------------------------------
// factor model

const FACTOR_TAG: &str = "mixspectral factor-model v1";

/// Write the factorization: W rows, then H1 rows, then H2 rows.
pub fn write_factor_model(path: &Path, model: &FactorModel) -> Result<(), PersistError> {
    let (n, k) = model.w.dim();
    let p1 = model.h1.ncols();
    let p2 = model.h2.ncols();
    let mut out = String::new();
    let _ = writeln!(out, "{FACTOR_TAG}");
    let _ = writeln!(out, "n {n} k {k} p1 {p1} p2 {p2}");
    for i in 0..n {
        push_float_row(&mut out, model.w.row(i));
    }
    for r in 0..k {
        push_float_row(&mut out, model.h1.row(r));
    }
    for r in 0..k {
        push_float_row(&mut out, model.h2.row(r));
    }
    write_atomic(path, &out)
}

pub fn read_factor_model(path: &Path) -> Result<FactorModel, PersistError> {
    let text = read_to_string(path)?;
    let mut lines = read_lines(path, &text);
    expect_tag(&mut lines, FACTOR_TAG)?;
    let dims = keyed_counts(&mut lines, &["n", "k", "p1", "p2"])?;
    let (n, k, p1, p2) = (dims[0], dims[1], dims[2], dims[3]);
    let w = read_matrix(&mut lines, n, k)?;
    let h1 = read_matrix(&mut lines, k, p1)?;
    let h2 = read_matrix(&mut lines, k, p2)?;
    Ok(FactorModel { w, h1, h2, k })
}

// ---------------------------------------------------------------------------
// similarity tensor

const SIMILARITY_TAG: &str = "mixspectral similarity-tensor v1";

/// Write the per-observation edge similarities, one observation per row in
/// lexicographic edge order.
pub fn write_similarity(path: &Path, tensor: &SimilarityTensor) -> Result<(), PersistError> {
    let mut out = String::new();
    let _ = writeln!(out, "{SIMILARITY_TAG}");
    let _ = writeln!(out, "n {} p {} m {}", tensor.n(), tensor.p, tensor.m());
    for i in 0..tensor.n() {
        push_float_row(&mut out, tensor.values.row(i));
    }
    write_atomic(path, &out)
}

pub fn read_similarity(path: &Path) -> Result<SimilarityTensor, PersistError> {
    let text = read_to_string(path)?;
    let mut lines = read_lines(path, &text);
    expect_tag(&mut lines, SIMILARITY_TAG)?;
    let dims = keyed_counts(&mut lines, &["n", "p", "m"])?;
    let (n, p, m) = (dims[0], dims[1], dims[2]);
    let edges = edge_set(p);
    if edges.len() != m {
        return Err(PersistError::format(
            lines.path,
            lines.line_no,
            format!("p = {p} implies {} edges, header says {m}", edges.len()),
        ));
    }
    let values = read_matrix(&mut lines, n, m)?;
    Ok(SimilarityTensor { values, edges, p })
}

// ---------------------------------------------------------------------------
// fitted edge weights

const WEIGHTS_TAG: &str = "mixspectral edge-weights v1";

/// Write the fitted edge-weight vector, one value per line in lexicographic
/// edge order over `p` variables.
pub fn write_edge_weights(
    path: &Path,
    theta: &ndarray::Array1<f64>,
    p: usize,
) -> Result<(), PersistError> {
    let mut out = String::new();
    let _ = writeln!(out, "{WEIGHTS_TAG}");
    let _ = writeln!(out, "p {p} m {}", theta.len());
    for v in theta.iter() {
        let _ = writeln!(out, "{v}");
    }
    write_atomic(path, &out)
}

pub fn read_edge_weights(path: &Path) -> Result<(ndarray::Array1<f64>, usize), PersistError> {
    let text = read_to_string(path)?;
    let mut lines = read_lines(path, &text);
    expect_tag(&mut lines, WEIGHTS_TAG)?;
    let dims = keyed_counts(&mut lines, &["p", "m"])?;
    let (p, m) = (dims[0], dims[1]);
    if p * (p - 1) / 2 != m {
        return Err(PersistError::format(
            lines.path,
            lines.line_no,
            format!("p = {p} implies {} edges, header says {m}", p * (p - 1) / 2),
        ));
    }
    let mut theta = Vec::with_capacity(m);
    for _ in 0..m {
        theta.push(float_row(&mut lines, 1)?[0]);
    }
    Ok((ndarray::Array1::from_vec(theta), p))
}

// ---------------------------------------------------------------------------
// spectral basis

const BASIS_TAG: &str = "mixspectral spectral-basis v1";

/// Write the Laplacian eigendecomposition: eigenvalues, then eigenvector
/// matrix rows (column `j` belongs to eigenvalue `j`).
pub fn write_spectral_basis(path: &Path, basis: &SpectralBasis) -> Result<(), PersistError> {
    let p = basis.p();
    let mut out = String::new();
    let _ = writeln!(out, "{BASIS_TAG}");
    let _ = writeln!(out, "p {p}");
    out.push_str("eigenvalues");
    for v in &basis.eigenvalues {
        let _ = write!(out, " {v}");
    }
    out.push('\n');
    for i in 0..p {
        push_float_row(&mut out, basis.eigenvectors.row(i));
    }
    write_atomic(path, &out)
}

pub fn read_spectral_basis(path: &Path) -> Result<SpectralBasis, PersistError> {
    let text = read_to_string(path)?;
    let mut lines = read_lines(path, &text);
    expect_tag(&mut lines, BASIS_TAG)?;
    let p = keyed_counts(&mut lines, &["p"])?[0];
    let eig_line = lines.next()?;
    let Some(rest) = eig_line.strip_prefix("eigenvalues") else {
        return Err(PersistError::format(
            lines.path,
            lines.line_no,
            format!("expected eigenvalues line, found {eig_line:?}"),
        ));
    };
    let eigenvalues: Vec<f64> = rest
        .split_whitespace()
        .map(|t| parse_f64(&lines, t))
        .collect::<Result<_, _>>()?;
    if eigenvalues.len() != p {
        return Err(PersistError::format(
            lines.path,
            lines.line_no,
            format!("expected {p} eigenvalues, found {}", eigenvalues.len()),
        ));
    }
    let eigenvectors = read_matrix(&mut lines, p, p)?;
    Ok(SpectralBasis {
        eigenvalues,
        eigenvectors,
    })
}

// ---------------------------------------------------------------------------
// embedding and assignments (CSV)

/// Write spectral (or principal-component) coordinates as CSV with columns
/// `f0..f{l-1}`.
pub fn write_embedding_csv(path: &Path, coords: &Array2<f64>) -> Result<(), PersistError> {
    let mut out = String::new();
    for j in 0..coords.ncols() {
        if j > 0 {
            out.push(',');
        }
        let _ = write!(out, "f{j}");
    }
    out.push('\n');
    for i in 0..coords.nrows() {
        for (j, v) in coords.row(i).iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    write_atomic(path, &out)
}

pub fn read_embedding_csv(path: &Path) -> Result<Array2<f64>, PersistError> {
    let text = read_to_string(path)?;
    let mut lines = read_lines(path, &text);
    let header = lines.next()?;
    let l = header.split(',').count();
    let mut flat = Vec::new();
    let mut n = 0;
    loop {
        lines.line_no += 1;
        let Some(line) = lines.lines.next() else {
            break;
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != l {
            return Err(PersistError::format(
                lines.path,
                lines.line_no,
                format!("expected {l} fields, found {}", fields.len()),
            ));
        }
        for tok in fields {
            flat.push(parse_f64(&lines, tok)?);
        }
        n += 1;
    }
    Ok(Array2::from_shape_vec((n, l), flat).expect("n × l entries were just read"))
}

/// Write one clustering as CSV rows `row,cluster`.
pub fn write_assignments_csv(path: &Path, labels: &[usize]) -> Result<(), PersistError> {
    let mut out = String::from("row,cluster\n");
    for (i, c) in labels.iter().enumerate() {
        let _ = writeln!(out, "{i},{c}");
    }
    write_atomic(path, &out)
}

pub fn read_assignments_csv(path: &Path) -> Result<Vec<usize>, PersistError> {
    let text = read_to_string(path)?;
    let mut lines = read_lines(path, &text);
    let header = lines.next()?;
    if header != "row,cluster" {
        return Err(PersistError::format(
            lines.path,
            lines.line_no,
            format!("expected header row,cluster, found {header:?}"),
        ));
    }
    let mut labels = Vec::new();
    loop {
        lines.line_no += 1;
        let Some(line) = lines.lines.next() else {
            break;
        };
        let Some((row, cluster)) = line.split_once(',') else {
            return Err(PersistError::format(
                lines.path,
                lines.line_no,
                format!("expected row,cluster, found {line:?}"),
            ));
        };
        let row = parse_usize(&lines, row)?;
        if row != labels.len() {
            return Err(PersistError::format(
                lines.path,
                lines.line_no,
                format!("expected row {}, found {row}", labels.len()),
            ));
        }
        labels.push(parse_usize(&lines, cluster)?);
    }
    Ok(labels)
}

/// Write the per-iteration ascent trace as CSV.
pub fn write_fit_trace_csv(
    path: &Path,
    trace: &crate::graph_model::FitTrace,
) -> Result<(), PersistError> {
    let mut out = String::from("iteration,log_likelihood,grad_norm\n");
    for (i, (ll, gn)) in trace
        .log_likelihood
        .iter()
        .zip(trace.grad_norm.iter())
        .enumerate()
    {
        let _ = writeln!(out, "{i},{ll},{gn}");
    }
    write_atomic(path, &out)
}
