//! Multi-view datasets: schema, ingestion from manifest + CSV files,
//! feature scaling, stratified splitting and view concatenation.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Label of the positive class (COVID-19); the negative class (CAP) is 0.
pub const POSITIVE: u8 = 1;
pub const NEGATIVE: u8 = 0;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ViewSchema {
    pub name: String,
    pub dim: usize,
}

impl ViewSchema {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        Self {
            name: name.into(),
            dim,
        }
    }
}

/// The seven feature groups extracted from lesion regions of chest CT:
/// two radiomic groups followed by five handcrafted groups.
pub fn table2_schema() -> Vec<ViewSchema> {
    [
        ("gray", 19),
        ("texture", 74),
        ("histogram", 30),
        ("number", 24),
        ("intensity", 2),
        ("surface", 7),
        ("volume", 33),
    ]
    .into_iter()
    .map(|(n, d)| ViewSchema::new(n, d))
    .collect()
}

pub const RADIOMIC_VIEWS: [&str; 2] = ["gray", "texture"];
pub const HANDCRAFTED_VIEWS: [&str; 5] = ["histogram", "number", "intensity", "surface", "volume"];

pub fn validate_schema(schema: &[ViewSchema]) -> Result<()> {
    if schema.is_empty() {
        return Err(Error::invalid("schema has no views"));
    }
    let mut seen = HashSet::new();
    for v in schema {
        if v.dim == 0 {
            return Err(Error::invalid(format!("view '{}' has dimension 0", v.name)));
        }
        if v.name.is_empty() || v.name.chars().any(char::is_whitespace) {
            return Err(Error::invalid(format!("invalid view name '{}'", v.name)));
        }
        if !seen.insert(v.name.as_str()) {
            return Err(Error::invalid(format!("duplicate view name '{}'", v.name)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub schema: ViewSchema,
    pub features: Matrix,
}

/// Aligned per-view feature matrices with one label per subject.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewDataset {
    subject_ids: Vec<String>,
    views: Vec<View>,
    labels: Vec<u8>,
}

impl MultiViewDataset {
    pub fn new(subject_ids: Vec<String>, views: Vec<View>, labels: Vec<u8>) -> Result<Self> {
        let n = subject_ids.len();
        let schema: Vec<ViewSchema> = views.iter().map(|v| v.schema.clone()).collect();
        validate_schema(&schema)?;
        for v in &views {
            if v.features.rows() != n {
                return Err(Error::invalid(format!(
                    "view '{}' has {} rows for {n} subjects",
                    v.schema.name,
                    v.features.rows()
                )));
            }
            if v.features.cols() != v.schema.dim {
                return Err(Error::invalid(format!(
                    "view '{}' has {} columns, schema says {}",
                    v.schema.name,
                    v.features.cols(),
                    v.schema.dim
                )));
            }
            if !v.features.is_finite() {
                return Err(Error::invalid(format!(
                    "view '{}' contains non-finite values",
                    v.schema.name
                )));
            }
        }
        if labels.len() != n {
            return Err(Error::invalid(format!(
                "{} labels for {n} subjects",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::invalid(format!("invalid label {bad}")));
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &subject_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::invalid(format!("duplicate subject id '{id}'")));
            }
        }
        Ok(Self {
            subject_ids,
            views,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subject_ids.is_empty()
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn views(&self) -> &[View] {
        &self.views
    }

    pub fn view(&self, v: usize) -> &View {
        &self.views[v]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn schema(&self) -> Vec<ViewSchema> {
        self.views.iter().map(|v| v.schema.clone()).collect()
    }

    pub fn total_dim(&self) -> usize {
        self.views.iter().map(|v| v.schema.dim).sum()
    }

    /// Sample `n` as one slice per view.
    pub fn sample(&self, n: usize) -> Vec<&[f64]> {
        self.views.iter().map(|v| v.features.row(n)).collect()
    }

    /// Negative and positive class sizes.
    pub fn class_counts(&self) -> [usize; 2] {
        let pos = self.labels.iter().filter(|&&y| y == POSITIVE).count();
        [self.labels.len() - pos, pos]
    }

    pub fn require_both_classes(&self) -> Result<()> {
        let [neg, pos] = self.class_counts();
        if neg == 0 || pos == 0 {
            return Err(Error::invalid(format!(
                "both classes are required (negatives: {neg}, positives: {pos})"
            )));
        }
        Ok(())
    }

    /// Subjects at the given indices, in that order.
    pub fn subset(&self, idx: &[usize]) -> MultiViewDataset {
        MultiViewDataset {
            subject_ids: idx.iter().map(|&i| self.subject_ids[i].clone()).collect(),
            views: self
                .views
                .iter()
                .map(|v| View {
                    schema: v.schema.clone(),
                    features: v.features.select_rows(idx),
                })
                .collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Keeps the named views, in the order given.
    pub fn select_views(&self, names: &[&str]) -> Result<MultiViewDataset> {
        let views = names
            .iter()
            .map(|name| {
                self.views
                    .iter()
                    .find(|v| v.schema.name == *name)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("no view named '{name}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        MultiViewDataset::new(self.subject_ids.clone(), views, self.labels.clone())
    }

    /// All views side by side as an N × Σdim matrix.
    pub fn concatenated_features(&self) -> Matrix {
        let parts: Vec<&Matrix> = self.views.iter().map(|v| &v.features).collect();
        Matrix::hstack(&parts).expect("views share the row count")
    }

    /// Single-view dataset whose columns follow view order.
    pub fn concat_views(&self) -> MultiViewDataset {
        let features = self.concatenated_features();
        MultiViewDataset {
            subject_ids: self.subject_ids.clone(),
            views: vec![View {
                schema: ViewSchema::new("concat", features.cols()),
                features,
            }],
            labels: self.labels.clone(),
        }
    }
}

/// Splits one concatenated row back into per-view pieces.
pub fn split_concatenated<'a>(schema: &[ViewSchema], row: &'a [f64]) -> Vec<&'a [f64]> {
    let mut out = Vec::with_capacity(schema.len());
    let mut start = 0;
    for v in schema {
        out.push(&row[start..start + v.dim]);
        start += v.dim;
    }
    out
}

// ---------------------------------------------------------------------------
// Feature scaling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PreprocessMode {
    /// `(x - mean) / std` with population standard deviation.
    Standardize,
    /// `(x - min) / (max - min)`, clamped to [0, 1].
    Normalize,
}

impl PreprocessMode {
    pub fn tag(self) -> u8 {
        match self {
            PreprocessMode::Standardize => 0,
            PreprocessMode::Normalize => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(PreprocessMode::Standardize),
            1 => Some(PreprocessMode::Normalize),
            _ => None,
        }
    }
}

impl std::str::FromStr for PreprocessMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standardize" => Ok(PreprocessMode::Standardize),
            "normalize" => Ok(PreprocessMode::Normalize),
            other => Err(Error::invalid(format!(
                "unknown preprocessing mode '{other}'"
            ))),
        }
    }
}

/// Per-feature statistics: (mean, std) when standardizing, (min, max) when
/// normalizing. A column whose values are all equal is constant and maps to 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnStats {
    pub location: f64,
    pub spread: f64,
    pub constant: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessStats {
    pub mode: PreprocessMode,
    pub views: Vec<Vec<ColumnStats>>,
}

impl PreprocessStats {
    /// Fits per-feature statistics on (training) data.
    pub fn fit(data: &MultiViewDataset, mode: PreprocessMode) -> Result<Self> {
        if data.len() < 2 {
            return Err(Error::invalid(
                "fitting preprocessing statistics needs at least 2 samples",
            ));
        }
        let views = data
            .views()
            .iter()
            .map(|v| {
                (0..v.schema.dim)
                    .map(|j| fit_column(&v.features.column(j), mode))
                    .collect()
            })
            .collect();
        Ok(Self { mode, views })
    }

    pub fn n_features(&self) -> usize {
        self.views.iter().map(Vec::len).sum()
    }

    fn check_dims(&self, dims: impl ExactSizeIterator<Item = usize>) -> Result<()> {
        if dims.len() != self.views.len() {
            return Err(Error::invalid(format!(
                "{} views given, preprocessing was fitted on {}",
                dims.len(),
                self.views.len()
            )));
        }
        for (i, (d, s)) in dims.zip(&self.views).enumerate() {
            if d != s.len() {
                return Err(Error::invalid(format!(
                    "view {i} has {d} features, preprocessing was fitted on {}",
                    s.len()
                )));
            }
        }
        Ok(())
    }

    pub fn apply(&self, data: &MultiViewDataset) -> Result<MultiViewDataset> {
        self.check_dims(data.views().iter().map(|v| v.schema.dim))?;
        let views = data
            .views()
            .iter()
            .zip(&self.views)
            .map(|(v, stats)| {
                let mut features = v.features.clone();
                for i in 0..features.rows() {
                    self.transform_row(features.row_mut(i), stats);
                }
                View {
                    schema: v.schema.clone(),
                    features,
                }
            })
            .collect();
        Ok(MultiViewDataset {
            subject_ids: data.subject_ids.clone(),
            views,
            labels: data.labels.clone(),
        })
    }

    /// Transforms one subject given as per-view slices.
    pub fn apply_sample(&self, views: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        self.check_dims(views.iter().map(|v| v.len()))?;
        Ok(views
            .iter()
            .zip(&self.views)
            .map(|(x, stats)| {
                let mut row = x.to_vec();
                self.transform_row(&mut row, stats);
                row
            })
            .collect())
    }

    fn transform_row(&self, row: &mut [f64], stats: &[ColumnStats]) {
        for (x, s) in row.iter_mut().zip(stats) {
            *x = if s.constant {
                0.0
            } else {
                match self.mode {
                    PreprocessMode::Standardize => (*x - s.location) / s.spread,
                    PreprocessMode::Normalize => {
                        ((*x - s.location) / (s.spread - s.location)).clamp(0.0, 1.0)
                    }
                }
            };
        }
    }
}

fn fit_column(col: &[f64], mode: PreprocessMode) -> ColumnStats {
    let min = col.iter().copied().fold(f64::INFINITY, f64::min);
    let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let constant = min == max;
    match mode {
        PreprocessMode::Standardize => {
            let n = col.len() as f64;
            let mean = col.iter().sum::<f64>() / n;
            let std = if constant {
                0.0
            } else {
                (col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
            };
            ColumnStats {
                location: mean,
                spread: std,
                constant,
            }
        }
        PreprocessMode::Normalize => ColumnStats {
            location: min,
            spread: max,
            constant,
        },
    }
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

/// Stratified random split; both parts keep every class.
pub fn split(
    data: &MultiViewDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(MultiViewDataset, MultiViewDataset)> {
    let (train, test) = split_indices(data.labels(), train_fraction, seed, true)?;
    Ok((data.subset(&train), data.subset(&test)))
}

/// Index form of [`split`]. With `stratified = false` the whole index set is
/// shuffled at once and only overall non-emptiness is required.
pub fn split_indices(
    labels: &[u8],
    train_fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction {train_fraction} is not in (0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let strata: Vec<Vec<usize>> = if stratified {
        class_indices(labels).into_iter().collect()
    } else {
        vec![(0..labels.len()).collect()]
    };
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, mut members) in strata.into_iter().enumerate() {
        members.shuffle(&mut rng);
        let n_train = (train_fraction * members.len() as f64).round() as usize;
        if n_train == 0 || n_train == members.len() {
            let what = if stratified {
                format!("class {c}")
            } else {
                "the data".into()
            };
            return Err(Error::invalid(format!(
                "train fraction {train_fraction} leaves an empty part for {what} ({} samples)",
                members.len()
            )));
        }
        train.extend_from_slice(&members[..n_train]);
        test.extend_from_slice(&members[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Indices of each class, in ascending order.
pub fn class_indices(labels: &[u8]) -> [Vec<usize>; 2] {
    let mut out = [Vec::new(), Vec::new()];
    for (i, &y) in labels.iter().enumerate() {
        out[y as usize].push(i);
    }
    out
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

/// Parsed manifest: view lines in order, and the optional labels file.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub views: Vec<(ViewSchema, PathBuf)>,
    pub labels: Option<PathBuf>,
}

impl Manifest {
    pub fn schema(&self) -> Vec<ViewSchema> {
        self.views.iter().map(|(s, _)| s.clone()).collect()
    }
}

/// Reads `view <name> <dim> <csv>` and `labels <csv>` lines. Relative paths
/// resolve against the manifest's directory; `#` starts a comment.
pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::ingestion(path, 0, format!("cannot read manifest: {e}")))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut views = Vec::new();
    let mut labels = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            ["view", name, dim, file] => {
                let dim: usize = dim.parse().ok().filter(|&d| d > 0).ok_or_else(|| {
                    Error::ingestion(path, line_no, format!("invalid view dimension '{dim}'"))
                })?;
                views.push((ViewSchema::new(*name, dim), base.join(file)));
            }
            ["labels", file] => {
                if labels.is_some() {
                    return Err(Error::ingestion(path, line_no, "more than one labels line"));
                }
                labels = Some(base.join(file));
            }
            _ => {
                return Err(Error::ingestion(
                    path,
                    line_no,
                    format!("unrecognized manifest line '{line}'"),
                ));
            }
        }
    }
    let schema: Vec<ViewSchema> = views.iter().map(|(s, _)| s.clone()).collect();
    validate_schema(&schema).map_err(|e| Error::ingestion(path, 0, e.to_string()))?;
    Ok(Manifest { views, labels })
}

/// Subject features from a manifest, with labels when the manifest has them.
#[derive(Debug, Clone)]
pub struct LoadedFeatures {
    pub subject_ids: Vec<String>,
    pub views: Vec<View>,
    pub labels: Option<Vec<u8>>,
}

impl LoadedFeatures {
    pub fn into_dataset(self) -> Result<MultiViewDataset> {
        let labels = self
            .labels
            .ok_or_else(|| Error::invalid("the manifest has no labels line"))?;
        MultiViewDataset::new(self.subject_ids, self.views, labels)
    }
}

pub fn load_dataset(manifest_path: &Path) -> Result<MultiViewDataset> {
    let loaded = load_features(manifest_path)?;
    if loaded.labels.is_none() {
        return Err(Error::ingestion(
            manifest_path,
            0,
            "manifest has no labels line",
        ));
    }
    loaded.into_dataset()
}

/// Loads every view (and labels if listed), aligned by subject id. Row order
/// follows the labels file, or the first view file when there are no labels.
pub fn load_features(manifest_path: &Path) -> Result<LoadedFeatures> {
    let manifest = read_manifest(manifest_path)?;
    let label_table = manifest
        .labels
        .as_deref()
        .map(read_labels_csv)
        .transpose()?;
    let mut tables = Vec::with_capacity(manifest.views.len());
    for (schema, file) in &manifest.views {
        tables.push((
            schema.clone(),
            file.clone(),
            read_view_csv(file, schema.dim)?,
        ));
    }
    let (order, order_source): (Vec<String>, PathBuf) = match (&label_table, &manifest.labels) {
        (Some(t), Some(p)) => (t.iter().map(|(id, _)| id.clone()).collect(), p.clone()),
        _ => (
            tables[0].2.iter().map(|(id, _)| id.clone()).collect(),
            tables[0].1.clone(),
        ),
    };
    let n = order.len();
    let position: HashMap<&str, usize> = order
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();

    let mut views = Vec::with_capacity(tables.len());
    for (schema, file, rows) in &tables {
        let mut features = Matrix::zeros(n, schema.dim);
        let mut filled = vec![false; n];
        for (line_idx, (id, values)) in rows.iter().enumerate() {
            let Some(&pos) = position.get(id.as_str()) else {
                return Err(Error::ingestion(
                    file,
                    line_idx + 2,
                    format!(
                        "subject '{id}' is not present in {}",
                        order_source.display()
                    ),
                ));
            };
            features.row_mut(pos).copy_from_slice(values);
            filled[pos] = true;
        }
        if let Some(missing) = filled.iter().position(|f| !f) {
            return Err(Error::ingestion(
                file,
                0,
                format!(
                    "subject '{}' from {} is missing",
                    order[missing],
                    order_source.display()
                ),
            ));
        }
        views.push(View {
            schema: schema.clone(),
            features,
        });
    }
    Ok(LoadedFeatures {
        subject_ids: order,
        views,
        labels: label_table.map(|t| t.into_iter().map(|(_, y)| y).collect()),
    })
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file =
        fs::File::open(path).map_err(|e| Error::ingestion(path, 0, format!("cannot open: {e}")))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn read_view_csv(path: &Path, dim: usize) -> Result<Vec<(String, Vec<f64>)>> {
    let mut reader = csv_reader(path)?;
    let header = reader
        .headers()
        .map_err(|e| Error::ingestion(path, 1, e.to_string()))?
        .clone();
    if header.len() != dim + 1 || header.get(0) != Some("subject_id") {
        return Err(Error::ingestion(
            path,
            1,
            format!("header must be subject_id followed by {dim} feature columns"),
        ));
    }
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::ingestion(path, 0, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != dim + 1 {
            return Err(Error::ingestion(
                path,
                line,
                format!("row has {} fields, expected {}", rec.len(), dim + 1),
            ));
        }
        let id = rec[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::ingestion(
                path,
                line,
                format!("duplicate subject id '{id}'"),
            ));
        }
        let values = rec
            .iter()
            .skip(1)
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::ingestion(path, line, format!("invalid number '{f}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((id, values));
    }
    Ok(rows)
}

fn read_labels_csv(path: &Path) -> Result<Vec<(String, u8)>> {
    let mut reader = csv_reader(path)?;
    let header = reader
        .headers()
        .map_err(|e| Error::ingestion(path, 1, e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>() != ["subject_id", "label"] {
        return Err(Error::ingestion(path, 1, "header must be subject_id,label"));
    }
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::ingestion(path, 0, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 2 {
            return Err(Error::ingestion(
                path,
                line,
                format!("row has {} fields, expected 2", rec.len()),
            ));
        }
        let id = rec[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::ingestion(
                path,
                line,
                format!("duplicate subject id '{id}'"),
            ));
        }
        let label = match &rec[1] {
            "0" => NEGATIVE,
            "1" => POSITIVE,
            other => {
                return Err(Error::ingestion(
                    path,
                    line,
                    format!("invalid label '{other}'"),
                ))
            }
        };
        rows.push((id, label));
    }
    Ok(rows)
}

/// Writes one CSV per view, `labels.csv` and `manifest.txt` into `dir`;
/// returns the manifest path.
pub fn write_dataset(data: &MultiViewDataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for v in data.views() {
        let file = format!("{}.csv", v.schema.name);
        let mut out = std::io::BufWriter::new(fs::File::create(dir.join(&file))?);
        write!(out, "subject_id")?;
        for j in 1..=v.schema.dim {
            write!(out, ",f{j}")?;
        }
        writeln!(out)?;
        for (id, row) in data.subject_ids().iter().zip(v.features.row_iter()) {
            write!(out, "{id}")?;
            for x in row {
                write!(out, ",{x}")?;
            }
            writeln!(out)?;
        }
        out.flush()?;
        manifest.push_str(&format!("view {} {} {file}\n", v.schema.name, v.schema.dim));
    }
    let mut labels = String::from("subject_id,label\n");
    for (id, y) in data.subject_ids().iter().zip(data.labels()) {
        labels.push_str(&format!("{id},{y}\n"));
    }
    fs::write(dir.join("labels.csv"), labels)?;
    manifest.push_str("labels labels.csv\n");
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest)?;
    Ok(path)
}
