//! Layered design matrices, binary responses, standardization and splits.
//!
//! A [`LayerStack`] is an `N×P` matrix whose columns are partitioned into
//! ordered, contiguous layers. At most the first layer may be exempt from
//! penalisation (the clinical-covariate block); all later layers are
//! penalised feature blocks.

use std::collections::HashSet;
use std::ops::Range;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One contiguous block of columns measured on the same individuals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layer {
    pub name: String,
    pub start: usize,
    pub end: usize,
    pub penalised: bool,
}

impl Layer {
    pub fn columns(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Column-partitioned design matrix with per-layer penalisation flags.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    pub matrix: Array2<f64>,
    pub layers: Vec<Layer>,
    pub row_ids: Vec<String>,
    pub column_names: Vec<String>,
}

impl LayerStack {
    /// Validates the layer partition and entry finiteness.
    pub fn new(
        matrix: Array2<f64>,
        layers: Vec<Layer>,
        row_ids: Vec<String>,
        column_names: Vec<String>,
    ) -> Result<Self> {
        let (n, p) = matrix.dim();
        if n < 1 || p < 1 {
            return Err(Error::InvalidInput(format!("empty design ({n}×{p})")));
        }
        if row_ids.len() != n {
            return Err(Error::InvalidInput("row_ids length mismatch".into()));
        }
        if column_names.len() != p {
            return Err(Error::InvalidInput("column_names length mismatch".into()));
        }
        let mut cursor = 0usize;
        for (i, layer) in layers.iter().enumerate() {
            if layer.start != cursor || layer.end <= layer.start {
                return Err(Error::InvalidInput(format!(
                    "layer '{}' has range {}..{}, expected to start at {}",
                    layer.name, layer.start, layer.end, cursor
                )));
            }
            if !layer.penalised && i > 0 {
                return Err(Error::InvalidInput(format!(
                    "only the first layer may be non-penalised, got '{}'",
                    layer.name
                )));
            }
            cursor = layer.end;
        }
        if cursor != p {
            return Err(Error::InvalidInput(format!(
                "layers cover 0..{cursor} but matrix has {p} columns"
            )));
        }
        if let Some(bad) = matrix.iter().position(|v| !v.is_finite()) {
            let (r, c) = (bad / p, bad % p);
            return Err(Error::InvalidInput(format!(
                "non-finite entry at row {r}, column {c}"
            )));
        }
        Ok(Self {
            matrix,
            layers,
            row_ids,
            column_names,
        })
    }

    /// Single penalised layer over an anonymous matrix; test and fixture helper.
    pub fn single_layer(matrix: Array2<f64>) -> Result<Self> {
        let (n, p) = matrix.dim();
        let layers = vec![Layer {
            name: "features".into(),
            start: 0,
            end: p,
            penalised: true,
        }];
        let row_ids = (0..n).map(|i| format!("r{i}")).collect();
        let column_names = (0..p).map(|j| format!("x{j}")).collect();
        Self::new(matrix, layers, row_ids, column_names)
    }

    pub fn n_rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Column indices of penalised layers, in order.
    pub fn penalised_columns(&self) -> Vec<usize> {
        self.layers
            .iter()
            .filter(|l| l.penalised)
            .flat_map(|l| l.columns())
            .collect()
    }

    /// Column indices of the non-penalised block (empty when all layers are penalised).
    pub fn unpenalised_columns(&self) -> Vec<usize> {
        self.layers
            .iter()
            .filter(|l| !l.penalised)
            .flat_map(|l| l.columns())
            .collect()
    }

    /// Index of the layer containing column `col`.
    pub fn layer_of(&self, col: usize) -> Option<usize> {
        self.layers.iter().position(|l| l.columns().contains(&col))
    }

    /// New stack keeping only `rows` (in the given order).
    pub fn subset_rows(&self, rows: &[usize]) -> Result<Self> {
        for &r in rows {
            if r >= self.n_rows() {
                return Err(Error::InvalidInput(format!("row {r} out of range")));
            }
        }
        let matrix = self.matrix.select(Axis(0), rows);
        let row_ids = rows.iter().map(|&r| self.row_ids[r].clone()).collect();
        Self::new(matrix, self.layers.clone(), row_ids, self.column_names.clone())
    }

    /// New stack keeping only `cols` (strictly increasing). Layer boundaries
    /// are recomputed; layers left with no columns are removed.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        if cols.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(
                "select_columns requires strictly increasing indices".into(),
            ));
        }
        if cols.is_empty() {
            return Err(Error::InvalidInput("select_columns: empty selection".into()));
        }
        if *cols.last().unwrap() >= self.n_cols() {
            return Err(Error::InvalidInput("select_columns: index out of range".into()));
        }
        let matrix = self.matrix.select(Axis(1), cols);
        let column_names = cols.iter().map(|&c| self.column_names[c].clone()).collect();
        let mut layers = Vec::new();
        let mut cursor = 0usize;
        for layer in &self.layers {
            let count = cols.iter().filter(|&&c| layer.columns().contains(&c)).count();
            if count > 0 {
                layers.push(Layer {
                    name: layer.name.clone(),
                    start: cursor,
                    end: cursor + count,
                    penalised: layer.penalised,
                });
                cursor += count;
            }
        }
        Self::new(matrix, layers, self.row_ids.clone(), column_names)
    }
}

/// Length-N vector of class labels in `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryResponse {
    pub labels: Vec<u8>,
}

impl BinaryResponse {
    pub fn new(labels: Vec<u8>) -> Result<Self> {
        if let Some(bad) = labels.iter().position(|&v| v > 1) {
            return Err(Error::InvalidInput(format!(
                "label at index {bad} is {} (want 0 or 1)",
                labels[bad]
            )));
        }
        Ok(Self { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.labels.iter().map(|&v| v as f64).sum::<f64>() / self.labels.len() as f64
    }

    /// Both classes present?
    pub fn has_both_classes(&self) -> bool {
        self.labels.iter().any(|&v| v == 0) && self.labels.iter().any(|&v| v == 1)
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }
}

/// Centre-and-scale parameters, recorded so the identical transform can be
/// applied to new data. `dropped` holds original indices of zero-variance
/// columns, which are removed rather than divided by zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub dropped: Vec<usize>,
}

/// Centre each column to mean 0 and scale to population variance 1.
///
/// Zero-variance columns are dropped (and recorded in the params); an
/// all-zero-variance design is an error.
pub fn standardize(stack: &LayerStack) -> Result<(LayerStack, StandardizationParams)> {
    let n = stack.n_rows();
    if n < 2 {
        return Err(Error::DegenerateDesign(format!(
            "standardize requires at least 2 rows, got {n}"
        )));
    }
    let p = stack.n_cols();
    let nf = n as f64;
    let mut means = Vec::with_capacity(p);
    let mut scales = Vec::with_capacity(p);
    let mut dropped = Vec::new();
    let mut kept = Vec::with_capacity(p);
    for j in 0..p {
        let col = stack.matrix.column(j);
        let mean = col.sum() / nf;
        let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / nf;
        let sd = var.sqrt();
        means.push(mean);
        if sd <= 1e-12 * (1.0 + mean.abs()) {
            scales.push(1.0);
            dropped.push(j);
        } else {
            scales.push(sd);
            kept.push(j);
        }
    }
    if kept.is_empty() {
        return Err(Error::DegenerateDesign(
            "all columns have zero variance".into(),
        ));
    }
    let params = StandardizationParams {
        means,
        scales,
        dropped,
    };
    let out = params.apply(stack)?;
    Ok((out, params))
}

impl StandardizationParams {
    /// Apply the recorded transform to a stack with the same column layout.
    pub fn apply(&self, stack: &LayerStack) -> Result<LayerStack> {
        let p = stack.n_cols();
        if p != self.means.len() {
            return Err(Error::InvalidInput(format!(
                "standardization params cover {} columns, stack has {p}",
                self.means.len()
            )));
        }
        let dropped: HashSet<usize> = self.dropped.iter().copied().collect();
        let kept: Vec<usize> = (0..p).filter(|j| !dropped.contains(j)).collect();
        let n = stack.n_rows();
        let mut matrix = Array2::<f64>::zeros((n, kept.len()));
        for (out_j, &j) in kept.iter().enumerate() {
            let m = self.means[j];
            let s = self.scales[j];
            for i in 0..n {
                matrix[[i, out_j]] = (stack.matrix[[i, j]] - m) / s;
            }
        }
        let base = if dropped.is_empty() {
            stack.clone()
        } else {
            stack.select_columns(&kept)?
        };
        LayerStack::new(matrix, base.layers, stack.row_ids.clone(), base.column_names)
    }
}

/// Row-disjoint train/test partition by fold id, preserving column structure.
pub fn split(
    stack: &LayerStack,
    y: &BinaryResponse,
    fold_assignment: &[usize],
    held_out_fold: usize,
) -> Result<((LayerStack, BinaryResponse), (LayerStack, BinaryResponse))> {
    let n = stack.n_rows();
    if fold_assignment.len() != n || y.len() != n {
        return Err(Error::InvalidInput("fold assignment length mismatch".into()));
    }
    let mut train_rows = Vec::new();
    let mut test_rows = Vec::new();
    for (i, &f) in fold_assignment.iter().enumerate() {
        if f == held_out_fold {
            test_rows.push(i);
        } else {
            train_rows.push(i);
        }
    }
    if test_rows.is_empty() {
        return Err(Error::FoldDegenerate(format!(
            "held-out fold {held_out_fold} has no rows"
        )));
    }
    let y_train = y.subset(&train_rows);
    if !y_train.has_both_classes() {
        return Err(Error::FoldDegenerate(format!(
            "training part lost a class when holding out fold {held_out_fold}"
        )));
    }
    Ok((
        (stack.subset_rows(&train_rows)?, y_train),
        (stack.subset_rows(&test_rows)?, y.subset(&test_rows)),
    ))
}

/// Layer manifest: declares the response column and the name/columns/flag of
/// each layer, in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerManifest {
    pub response: String,
    pub layers: Vec<ManifestLayer>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestLayer {
    pub name: String,
    pub columns: Vec<String>,
    pub penalised: bool,
}

impl LayerManifest {
    /// Manifest describing an existing stack.
    pub fn describe(stack: &LayerStack, response: &str) -> Self {
        Self {
            response: response.to_string(),
            layers: stack
                .layers
                .iter()
                .map(|l| ManifestLayer {
                    name: l.name.clone(),
                    columns: l.columns().map(|c| stack.column_names[c].clone()).collect(),
                    penalised: l.penalised,
                })
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let manifest: LayerManifest = serde_json::from_str(&text)?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Format a float with 17 significant digits (exact `f64` text round-trip).
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Load a matrix CSV (first column `id`, header row) plus its layer
/// manifest. Columns are reordered to manifest layer order and the response
/// column is extracted and removed from the matrix.
pub fn load_csv(matrix_path: &Path, manifest_path: &Path) -> Result<(LayerStack, BinaryResponse)> {
    let manifest = LayerManifest::load(manifest_path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(matrix_path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|s| s.to_string()).collect();
    if headers.first().map(String::as_str) != Some("id") {
        return Err(Error::Parse(format!(
            "{}: first column must be 'id', got '{}'",
            matrix_path.display(),
            headers.first().cloned().unwrap_or_default()
        )));
    }
    let col_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("{}: missing column '{name}'", matrix_path.display())))
    };

    // Read all rows as strings first so errors can cite locations.
    let mut rows: Vec<Vec<String>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::Parse(format!(
                "{}: row {} has {} fields, header has {}",
                matrix_path.display(),
                r + 1,
                record.len(),
                headers.len()
            )));
        }
        rows.push(record.iter().map(|s| s.to_string()).collect());
    }
    let n = rows.len();
    if n == 0 {
        return Err(Error::Parse(format!("{}: no data rows", matrix_path.display())));
    }

    let mut row_ids = Vec::with_capacity(n);
    let mut seen = HashSet::new();
    for row in &rows {
        if !seen.insert(row[0].clone()) {
            return Err(Error::Parse(format!(
                "{}: duplicate row id '{}'",
                matrix_path.display(),
                row[0]
            )));
        }
        row_ids.push(row[0].clone());
    }

    let response_idx = col_index(&manifest.response)?;
    let mut labels = Vec::with_capacity(n);
    for (r, row) in rows.iter().enumerate() {
        let raw = &row[response_idx];
        let v: f64 = raw.parse().map_err(|_| {
            Error::Parse(format!(
                "{}: row '{}', column '{}': non-numeric value '{raw}'",
                matrix_path.display(),
                row[0],
                manifest.response
            ))
        })?;
        if v != 0.0 && v != 1.0 {
            return Err(Error::Parse(format!(
                "{}: row '{}', column '{}': response '{raw}' not in {{0,1}}",
                matrix_path.display(),
                row_ids[r],
                manifest.response
            )));
        }
        labels.push(v as u8);
    }

    let mut layers = Vec::new();
    let mut column_names = Vec::new();
    let mut source_cols = Vec::new();
    let mut cursor = 0usize;
    for ml in &manifest.layers {
        for cname in &ml.columns {
            if cname == &manifest.response {
                return Err(Error::Parse(format!(
                    "manifest lists response column '{cname}' inside layer '{}'",
                    ml.name
                )));
            }
            source_cols.push(col_index(cname)?);
            column_names.push(cname.clone());
        }
        layers.push(Layer {
            name: ml.name.clone(),
            start: cursor,
            end: cursor + ml.columns.len(),
            penalised: ml.penalised,
        });
        cursor += ml.columns.len();
    }

    let p = source_cols.len();
    let mut matrix = Array2::<f64>::zeros((n, p));
    for (i, row) in rows.iter().enumerate() {
        for (j, &src) in source_cols.iter().enumerate() {
            let raw = &row[src];
            matrix[[i, j]] = raw.parse().map_err(|_| {
                Error::Parse(format!(
                    "{}: row '{}', column '{}': non-numeric value '{raw}'",
                    matrix_path.display(),
                    row_ids[i],
                    headers[src]
                ))
            })?;
        }
    }

    let stack = LayerStack::new(matrix, layers, row_ids, column_names)?;
    Ok((stack, BinaryResponse::new(labels)?))
}

/// Write a stack plus response as a matrix CSV readable by [`load_csv`].
pub fn save_csv(
    stack: &LayerStack,
    y: &BinaryResponse,
    response_name: &str,
    matrix_path: &Path,
) -> Result<()> {
    if y.len() != stack.n_rows() {
        return Err(Error::InvalidInput("response length mismatch".into()));
    }
    let mut writer = csv::Writer::from_path(matrix_path)?;
    let mut header = vec!["id".to_string(), response_name.to_string()];
    header.extend(stack.column_names.iter().cloned());
    writer.write_record(&header)?;
    for i in 0..stack.n_rows() {
        let mut record = vec![stack.row_ids[i].clone(), y.labels[i].to_string()];
        record.extend(stack.matrix.row(i).iter().map(|&v| fmt_float(v)));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Column means of an owned array; small helper shared by tests.
pub fn column_means(matrix: &Array2<f64>) -> Array1<f64> {
    matrix.mean_axis(Axis(0)).expect("non-empty matrix")
}
