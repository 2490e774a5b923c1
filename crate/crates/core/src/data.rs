//! Tabular data ingestion and equal-count feature quantization.
//!
//! A feature with thresholds `t_0 < t_1 < ... < t_{k-1}` maps a value `v` to
//! the number of thresholds strictly below it, so bin `b` covers
//! `(t_{b-1}, t_b]` and a split `(j, k)` sends `v` left iff `v <= t_k`.
//! Values outside the training range land in the boundary bins.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::SplitCandidate;

/// Bin index of a quantized feature value.
pub type Bin = u16;

/// A dense numeric table read from CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::from_reader(file)
    }

    pub fn from_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        if headers.is_empty() || headers.iter().all(String::is_empty) {
            return Err(Error::EmptyDataset);
        }
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| {
                let row = e.position().map_or(0, |p| p.line() as usize);
                Error::Parse {
                    row,
                    column: "-".into(),
                    message: e.to_string(),
                }
            })?;
            let line = record
                .position()
                .map_or(rows.len() + 2, |p| p.line() as usize);
            let mut values = Vec::with_capacity(headers.len());
            for (cell, name) in record.iter().zip(&headers) {
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    row: line,
                    column: name.clone(),
                    message: format!("`{cell}` is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        row: line,
                        column: name.clone(),
                        message: format!("`{cell}` is not finite"),
                    });
                }
                values.push(v);
            }
            rows.push(values);
        }
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Table { headers, rows })
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    pub fn column(&self, index: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[index]).collect()
    }

    /// Row-major matrix of the named columns, in the given order.
    pub fn select(&self, names: &[String]) -> Result<Vec<f64>> {
        let idx = names
            .iter()
            .map(|n| {
                self.column_index(n).ok_or_else(|| Error::Shape {
                    expected: format!("column `{n}`"),
                    actual: format!("columns {:?}", self.headers),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self
            .rows
            .iter()
            .flat_map(|r| idx.iter().map(move |&i| r[i]))
            .collect())
    }
}

/// Which CSV column holds the target.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TargetColumn {
    Name(String),
    Index(usize),
}

impl TargetColumn {
    fn resolve(&self, table: &Table) -> Result<usize> {
        match self {
            TargetColumn::Name(name) => table.column_index(name).ok_or_else(|| Error::Shape {
                expected: format!("target column `{name}`"),
                actual: format!("columns {:?}", table.headers),
            }),
            TargetColumn::Index(i) if *i < table.headers.len() => Ok(*i),
            TargetColumn::Index(i) => Err(Error::shape(
                format!("target index < {}", table.headers.len()),
                i,
            )),
        }
    }
}

impl std::str::FromStr for TargetColumn {
    type Err = std::convert::Infallible;

    /// Numeric strings are column indices, anything else a header name.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => TargetColumn::Index(i),
            Err(_) => TargetColumn::Name(s.to_owned()),
        })
    }
}

/// Raw regression data: an `N x d` feature matrix (row-major) and targets.
#[derive(Clone, Debug, PartialEq)]
pub struct RawDataset {
    features: Vec<f64>,
    n_rows: usize,
    n_features: usize,
    targets: Vec<f64>,
    feature_names: Option<Vec<String>>,
    target_bound: Option<f64>,
}

impl RawDataset {
    pub fn new(features: Vec<f64>, n_features: usize, targets: Vec<f64>) -> Result<Self> {
        if targets.is_empty() || n_features == 0 {
            return Err(Error::EmptyDataset);
        }
        if features.len() != targets.len() * n_features {
            return Err(Error::shape(
                format!("{} feature values", targets.len() * n_features),
                features.len(),
            ));
        }
        if let Some(i) = features.iter().chain(&targets).position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!(
                "non-finite value at flat index {i}"
            )));
        }
        Ok(RawDataset {
            n_rows: targets.len(),
            features,
            n_features,
            targets,
            feature_names: None,
            target_bound: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], targets: Vec<f64>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::shape(format!("rows of length {d}"), "ragged rows"));
        }
        Self::new(rows.concat(), d, targets)
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_features {
            return Err(Error::shape(self.n_features, names.len()));
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    /// Rescale the whole target vector so that `(1/2N) sum y^2 <= bound^2`.
    ///
    /// Targets already inside the bound are left untouched.
    pub fn clip_targets(mut self, bound: f64) -> Result<Self> {
        if !(bound > 0.0 && bound.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "clip bound must be positive, got {bound}"
            )));
        }
        let half_mean_sq = half_mean_square(&self.targets);
        if half_mean_sq > bound * bound {
            let scale = bound / half_mean_sq.sqrt();
            for y in &mut self.targets {
                *y *= scale;
            }
        }
        self.target_bound = Some(bound);
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn target_bound(&self) -> Option<f64> {
        self.target_bound
    }
}

/// `(1/2N) * sum(y^2)`.
pub fn half_mean_square(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>() / (2.0 * values.len() as f64)
}

/// Load a numeric CSV with a header row, optionally clipping the targets.
/// Every column other than the target and `exclude` is a feature.
pub fn load_csv(
    path: impl AsRef<Path>,
    target: &TargetColumn,
    exclude: &[String],
    clip_bound: Option<f64>,
) -> Result<RawDataset> {
    dataset_from_table(&Table::read(path)?, target, exclude, clip_bound)
}

pub fn dataset_from_table(
    table: &Table,
    target: &TargetColumn,
    exclude: &[String],
    clip_bound: Option<f64>,
) -> Result<RawDataset> {
    let t = target.resolve(table)?;
    if let Some(missing) = exclude.iter().find(|e| table.column_index(e).is_none()) {
        return Err(Error::InvalidConfig(format!("no column named {missing:?}")));
    }
    let names: Vec<String> = table
        .headers
        .iter()
        .enumerate()
        .filter(|&(i, h)| i != t && !exclude.contains(h))
        .map(|(_, h)| h.clone())
        .collect();
    let features = table.select(&names)?;
    let ds = RawDataset::new(features, names.len(), table.column(t))?.with_feature_names(names)?;
    match clip_bound {
        Some(bound) => ds.clip_targets(bound),
        None => Ok(ds),
    }
}

/// Per-feature ascending cut points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureQuantizer {
    thresholds: Vec<Vec<f64>>,
}

impl FeatureQuantizer {
    pub fn from_thresholds(thresholds: Vec<Vec<f64>>) -> Result<Self> {
        for (j, t) in thresholds.iter().enumerate() {
            if t.windows(2).any(|w| !(w[0] < w[1])) || t.iter().any(|v| !v.is_finite()) {
                return Err(Error::Contract(format!(
                    "thresholds of feature {j} must be finite and strictly increasing"
                )));
            }
        }
        Ok(FeatureQuantizer { thresholds })
    }

    /// Fit at most `n` thresholds per feature at the nearest-rank quantiles
    /// `i/(n+1)`, `i = 1..=n`.
    ///
    /// Repeated quantiles collapse, and a cut at the feature's maximum is
    /// dropped because it cannot separate any training value, so features with
    /// few distinct values get fewer thresholds (none when constant).
    pub fn fit(data: &RawDataset, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfig(
                "number of thresholds must be >= 1".into(),
            ));
        }
        let rows = data.n_rows();
        let thresholds = (0..data.n_features())
            .map(|j| {
                let mut col: Vec<f64> = (0..rows).map(|i| data.row(i)[j]).collect();
                col.sort_by(f64::total_cmp);
                let max = col[rows - 1];
                let mut cuts: Vec<f64> = Vec::with_capacity(n);
                for i in 1..=n {
                    // rank = ceil(i * N / (n + 1)), 1-based
                    let rank = ((i * rows + n) / (n + 1)).clamp(1, rows);
                    let v = col[rank - 1];
                    if v < max && cuts.last().is_none_or(|&last| last < v) {
                        cuts.push(v);
                    }
                }
                cuts
            })
            .collect();
        Ok(FeatureQuantizer { thresholds })
    }

    pub fn n_features(&self) -> usize {
        self.thresholds.len()
    }

    pub fn thresholds(&self, feature: usize) -> &[f64] {
        &self.thresholds[feature]
    }

    /// Number of thresholds per feature.
    pub fn n_per_feature(&self) -> Vec<usize> {
        self.thresholds.iter().map(Vec::len).collect()
    }

    pub fn bin(&self, feature: usize, value: f64) -> Bin {
        self.thresholds[feature].partition_point(|&t| t < value) as Bin
    }

    /// Quantize a row-major matrix with `n_features` columns.
    pub fn quantize_rows(&self, features: &[f64], n_features: usize) -> Result<BinnedRows> {
        if n_features != self.n_features() {
            return Err(Error::shape(
                format!("{} features", self.n_features()),
                format!("{n_features} features"),
            ));
        }
        if n_features == 0 || !features.len().is_multiple_of(n_features) {
            return Err(Error::shape(
                format!("a multiple of {n_features} values"),
                features.len(),
            ));
        }
        let bins = features
            .chunks_exact(n_features)
            .flat_map(|row| row.iter().enumerate().map(|(j, &v)| self.bin(j, v)))
            .collect();
        Ok(BinnedRows::new(bins, n_features))
    }

    pub fn quantize(&self, data: &RawDataset) -> Result<BinnedDataset> {
        let rows = self.quantize_rows(data.features(), data.n_features())?;
        let bound = data
            .target_bound()
            .unwrap_or_else(|| half_mean_square(data.targets()).sqrt());
        Ok(BinnedDataset {
            rows,
            targets: data.targets().to_vec(),
            quantizer: self.clone(),
            target_bound: bound,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: FeatureQuantizer = serde_json::from_str(s)?;
        Self::from_thresholds(raw.thresholds)
    }
}

/// Quantized feature rows, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinnedRows {
    bins: Vec<Bin>,
    n_features: usize,
}

impl BinnedRows {
    pub fn new(bins: Vec<Bin>, n_features: usize) -> Self {
        assert!(n_features > 0 && bins.len().is_multiple_of(n_features));
        BinnedRows { bins, n_features }
    }

    pub fn n_rows(&self) -> usize {
        self.bins.len() / self.n_features
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[Bin] {
        &self.bins[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, Bin> {
        self.bins.chunks_exact(self.n_features)
    }

    /// Rows at the given indices.
    pub fn subset(&self, indices: &[usize]) -> BinnedRows {
        let bins = indices
            .iter()
            .flat_map(|&i| self.row(i).iter().copied())
            .collect();
        BinnedRows::new(bins, self.n_features)
    }
}

/// Training data in quantized form, together with the quantizer that made it.
#[derive(Clone, Debug, PartialEq)]
pub struct BinnedDataset {
    rows: BinnedRows,
    targets: Vec<f64>,
    quantizer: FeatureQuantizer,
    target_bound: f64,
}

impl BinnedDataset {
    pub fn n_rows(&self) -> usize {
        self.targets.len()
    }

    pub fn n_features(&self) -> usize {
        self.rows.n_features()
    }

    pub fn rows(&self) -> &BinnedRows {
        &self.rows
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn quantizer(&self) -> &FeatureQuantizer {
        &self.quantizer
    }

    /// The bound `R` with `(1/2N) sum y^2 <= R^2`.
    pub fn target_bound(&self) -> f64 {
        self.target_bound
    }

    /// Same features, different targets.
    pub fn with_targets(&self, targets: Vec<f64>) -> Result<BinnedDataset> {
        if targets.len() != self.n_rows() {
            return Err(Error::shape(self.n_rows(), targets.len()));
        }
        let target_bound = half_mean_square(&targets).sqrt();
        Ok(BinnedDataset {
            rows: self.rows.clone(),
            targets,
            quantizer: self.quantizer.clone(),
            target_bound,
        })
    }

    /// All candidate splits `(feature, bin)` in lexicographic order.
    pub fn candidates(&self) -> Vec<SplitCandidate> {
        self.quantizer
            .n_per_feature()
            .into_iter()
            .enumerate()
            .flat_map(|(feature, count)| {
                (0..count).map(move |bin| SplitCandidate::new(feature, bin as Bin))
            })
            .collect()
    }
}
