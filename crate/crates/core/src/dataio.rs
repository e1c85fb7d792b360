//! Dataset containers, CSV ingestion, target gridding and cross-validation
//! splits.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_tree::GridShape;

/// Feature rows paired with flat grid targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    features: Vec<f64>,
    n_features: usize,
    targets: Vec<usize>,
    shape: GridShape,
}

impl Samples {
    pub fn new(features: Vec<f64>, n_features: usize, targets: Vec<usize>, shape: GridShape) -> Result<Self> {
        if features.len() != n_features * targets.len() {
            return Err(Error::data(format!(
                "{} feature values for {} rows of width {n_features}",
                features.len(),
                targets.len()
            )));
        }
        if let Some(bad) = targets.iter().find(|&&t| t >= shape.total()) {
            return Err(Error::data(format!(
                "target cell {bad} outside grid of {} cells",
                shape.total()
            )));
        }
        Ok(Samples {
            features,
            n_features,
            targets,
            shape,
        })
    }

    /// Targets without covariates.
    pub fn marginal(targets: Vec<usize>, shape: GridShape) -> Result<Self> {
        Self::new(Vec::new(), 0, targets, shape)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn y(&self, i: usize) -> usize {
        self.targets[i]
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn subset(&self, rows: &[usize]) -> Samples {
        let mut features = Vec::with_capacity(rows.len() * self.n_features);
        for &r in rows {
            features.extend_from_slice(self.x(r));
        }
        Samples {
            features,
            n_features: self.n_features,
            targets: rows.iter().map(|&r| self.targets[r]).collect(),
            shape: self.shape.clone(),
        }
    }

    /// Seeded split into (train, validation) with `fraction` of rows held out.
    pub fn split_validation(&self, fraction: f64, seed: u64) -> Result<(Samples, Samples)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::config(format!(
                "validation fraction must be in (0, 1), got {fraction}"
            )));
        }
        let mut rows: Vec<usize> = (0..self.len()).collect();
        rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_val = (fraction * self.len() as f64).round() as usize;
        if n_val == 0 || n_val >= self.len() {
            return Err(Error::config(format!(
                "cannot hold out {fraction} of {} rows for validation",
                self.len()
            )));
        }
        let (val, train) = rows.split_at(n_val);
        Ok((self.subset(train), self.subset(val)))
    }

    /// Writes `x0..x{p-1},y0..y{d-1}` with grid coordinates as targets.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        let mut header: Vec<String> = (0..self.n_features).map(|j| format!("x{j}")).collect();
        header.extend((0..self.shape.ndim()).map(|j| format!("y{j}")));
        w.write_record(&header).map_err(|e| csv_io(path, e))?;
        for i in 0..self.len() {
            let mut record: Vec<String> = self.x(i).iter().map(|v| v.to_string()).collect();
            record.extend(self.shape.unflatten(self.y(i)).iter().map(|c| c.to_string()));
            w.write_record(&record).map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })
    }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::data(format!("{}: {e}", path.display()))
}

/// Which CSV columns are features and targets, and how to grid the targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub features: Vec<String>,
    pub targets: Vec<String>,
    /// Bins per target dimension; `None` keeps integer targets as they are.
    pub bins: Option<Vec<usize>>,
}

/// How one target column was mapped onto grid indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetBinning {
    pub min: f64,
    pub max: f64,
    pub bins: usize,
    /// Integer targets kept as `value − min`.
    pub passthrough: bool,
}

impl TargetBinning {
    pub fn width(&self) -> f64 {
        if self.passthrough {
            1.0
        } else {
            (self.max - self.min) / self.bins as f64
        }
    }

    /// Raw-scale center of bin `index`.
    pub fn center(&self, index: usize) -> f64 {
        if self.passthrough {
            self.min + index as f64
        } else {
            self.min + (index as f64 + 0.5) * self.width()
        }
    }

    pub fn index(&self, value: f64) -> usize {
        if self.passthrough {
            return (value - self.min).round() as usize;
        }
        let raw = ((value - self.min) / self.width()).floor();
        (raw.max(0.0) as usize).min(self.bins - 1)
    }
}

/// Equal-width binning of a real column onto `{0, …, bins−1}`. Values on a
/// cell boundary go to the upper cell; the maximum maps to `bins − 1`.
/// Integer columns whose range spans exactly `bins` values pass through.
pub fn discretize_targets(values: &[f64], bins: usize) -> Result<(Vec<usize>, TargetBinning)> {
    if bins < 2 {
        return Err(Error::config(format!("need at least 2 bins, got {bins}")));
    }
    if values.is_empty() {
        return Err(Error::data("cannot discretize an empty column"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("target column contains non-finite values"));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Err(Error::data(format!("target column is constant ({min})")));
    }
    let integral = values.iter().all(|v| v.fract() == 0.0);
    let passthrough = integral && (max - min) as usize + 1 == bins;
    let binning = TargetBinning {
        min,
        max,
        bins,
        passthrough,
    };
    Ok((values.iter().map(|&v| binning.index(v)).collect(), binning))
}

/// A tabular benchmark dataset with gridded targets.
#[derive(Debug, Clone)]
pub struct TabularDataset {
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
    /// Row-major `n × p`.
    pub features: Vec<f64>,
    /// Flat grid cell per row.
    pub targets: Vec<usize>,
    pub shape: GridShape,
    pub binning: Vec<TargetBinning>,
}

impl TabularDataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn target_dims(&self) -> usize {
        self.target_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_features();
        &self.features[i * p..(i + 1) * p]
    }

    /// Rows `rows` as samples, with features transformed by `standardizer`.
    pub fn samples(&self, rows: &[usize], standardizer: &Standardizer) -> Result<Samples> {
        let mut features = Vec::with_capacity(rows.len() * self.n_features());
        for &r in rows {
            features.extend(standardizer.transform(self.row(r)));
        }
        Samples::new(
            features,
            self.n_features(),
            rows.iter().map(|&r| self.targets[r]).collect(),
            self.shape.clone(),
        )
    }
}

/// Parses a numeric CSV with a header row.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<TabularDataset> {
    let file = File::open(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    load_csv_reader(file, schema, &path.display().to_string())
}

pub fn load_csv_reader<R: std::io::Read>(reader: R, schema: &Schema, name: &str) -> Result<TabularDataset> {
    if schema.targets.is_empty() {
        return Err(Error::config("schema names no target columns"));
    }
    if let Some(bins) = &schema.bins {
        if bins.len() != schema.targets.len() {
            return Err(Error::config(format!(
                "{} bin counts for {} target columns",
                bins.len(),
                schema.targets.len()
            )));
        }
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::data(format!("{name}: cannot read header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    let column = |wanted: &String| -> Result<usize> {
        header
            .iter()
            .position(|h| h == wanted)
            .ok_or_else(|| Error::data(format!("{name}: missing column '{wanted}'")))
    };
    let feature_idx: Vec<usize> = schema.features.iter().map(column).collect::<Result<_>>()?;
    let target_idx: Vec<usize> = schema.targets.iter().map(column).collect::<Result<_>>()?;

    let mut features = Vec::new();
    let mut raw_targets: Vec<Vec<f64>> = vec![Vec::new(); target_idx.len()];
    for (row_no, record) in rdr.records().enumerate() {
        // header is line 1
        let line = row_no + 2;
        let record = record.map_err(|e| Error::data(format!("{name}: line {line}: {e}")))?;
        let cell = |idx: usize| -> Result<f64> {
            let text = record.get(idx).unwrap_or("");
            if text.is_empty() {
                return Err(Error::data(format!(
                    "{name}: line {line}, column '{}': missing value",
                    header[idx]
                )));
            }
            text.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    Error::data(format!(
                        "{name}: line {line}, column '{}': not a number: '{text}'",
                        header[idx]
                    ))
                })
        };
        for &idx in &feature_idx {
            features.push(cell(idx)?);
        }
        for (col, &idx) in raw_targets.iter_mut().zip(&target_idx) {
            col.push(cell(idx)?);
        }
    }
    let n = raw_targets[0].len();
    if n == 0 {
        return Err(Error::data(format!("{name}: no data rows")));
    }

    let mut coords: Vec<Vec<usize>> = Vec::with_capacity(target_idx.len());
    let mut binning = Vec::with_capacity(target_idx.len());
    for (d, col) in raw_targets.iter().enumerate() {
        let (idx, b) = match &schema.bins {
            Some(bins) => discretize_targets(col, bins[d])?,
            None => integer_targets(col, &schema.targets[d])?,
        };
        coords.push(idx);
        binning.push(b);
    }
    let shape = GridShape::new(binning.iter().map(|b| b.bins).collect())
        .map_err(|e| Error::data(format!("{name}: {e}")))?;
    let targets = (0..n)
        .map(|i| {
            let coord: Vec<usize> = coords.iter().map(|c| c[i]).collect();
            shape.flatten_unchecked(&coord)
        })
        .collect();
    Ok(TabularDataset {
        feature_names: schema.features.clone(),
        target_names: schema.targets.clone(),
        features,
        targets,
        shape,
        binning,
    })
}

/// Non-negative integer targets used directly as grid indices `0..=max`.
fn integer_targets(col: &[f64], name: &str) -> Result<(Vec<usize>, TargetBinning)> {
    if col.iter().any(|v| v.fract() != 0.0 || *v < 0.0) {
        return Err(Error::data(format!(
            "target '{name}' is not a non-negative integer column; give a bin count"
        )));
    }
    let max = col.iter().copied().fold(0.0, f64::max);
    let binning = TargetBinning {
        min: 0.0,
        max,
        bins: max as usize + 1,
        passthrough: true,
    };
    Ok((col.iter().map(|&v| v as usize).collect(), binning))
}

/// Fold id per row: seeded shuffle, then contiguous blocks whose sizes differ
/// by at most one.
pub fn kfold(n: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::config(format!("need at least 2 folds, got {folds}")));
    }
    if n < folds {
        return Err(Error::data(format!("{n} rows cannot fill {folds} folds")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut ids = vec![0; n];
    for f in 0..folds {
        for &row in &perm[f * n / folds..(f + 1) * n / folds] {
            ids[row] = f;
        }
    }
    Ok(ids)
}

/// Row indices of one cross-validation trial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Held-out fold as test; `val_fraction` of the remaining rows (seeded) as
/// validation.
pub fn trial_split(fold_ids: &[usize], fold: usize, val_fraction: f64, seed: u64) -> Result<TrialSplit> {
    let test: Vec<usize> = (0..fold_ids.len()).filter(|&i| fold_ids[i] == fold).collect();
    let mut rest: Vec<usize> = (0..fold_ids.len()).filter(|&i| fold_ids[i] != fold).collect();
    if test.is_empty() || rest.is_empty() {
        return Err(Error::config(format!("fold {fold} leaves an empty split")));
    }
    rest.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ (fold as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
    let n_val = ((val_fraction * rest.len() as f64).round() as usize).max(1);
    if n_val >= rest.len() {
        return Err(Error::config("validation split would consume all training rows"));
    }
    let mut validation = rest[..n_val].to_vec();
    let mut train = rest[n_val..].to_vec();
    validation.sort_unstable();
    train.sort_unstable();
    Ok(TrialSplit {
        train,
        validation,
        test,
    })
}

/// Per-column affine map to zero mean and unit variance, fitted on a subset
/// of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(p: usize) -> Self {
        Standardizer {
            mean: vec![0.0; p],
            scale: vec![1.0; p],
        }
    }

    pub fn fit(data: &TabularDataset, rows: &[usize]) -> Result<Self> {
        let p = data.n_features();
        if rows.is_empty() {
            return Err(Error::data("cannot fit standardization on zero rows"));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; p];
        for &r in rows {
            for (m, v) in mean.iter_mut().zip(data.row(r)) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; p];
        for &r in rows {
            for ((s, v), m) in var.iter_mut().zip(data.row(r)).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| if v > 0.0 { v.sqrt() } else { 1.0 })
            .collect();
        Ok(Standardizer { mean, scale })
    }

    pub fn transform<'a>(&'a self, row: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
        row.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }
}

/// Writes rows to `path`, creating parent directories.
pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    let io = |e| Error::Io {
        path: path.display().to_string(),
        source: e,
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    let mut f = File::create(path).map_err(io)?;
    f.write_all(text.as_bytes()).map_err(io)
}
