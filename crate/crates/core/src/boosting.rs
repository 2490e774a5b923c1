//! Regularized gradient boosting of randomized oblivious trees.
//!
//! Each iteration fits a sampled tree to the residuals `y - f(x)` by leaf
//! means and updates `f <- (1 - lambda * lr / N) f + lr * tree`. The
//! per-iteration shrinkage is folded into per-tree coefficients
//! `c_t = lr * (1 - lambda * lr / N)^(T - 1 - t)` when the model is finalized.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{BinnedDataset, BinnedRows, FeatureQuantizer};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::tree::{fit_leaf_values, FittedTree, TreeSampler, TreeStructure};

/// Hyper-parameters of [`train`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    pub learning_rate: f64,
    /// Shrinkage strength `lambda`; 0 disables shrinkage.
    pub l2_regularization: f64,
    pub iterations: usize,
    pub depth: usize,
    /// Thresholds per feature used when the training data was quantized.
    pub bins: usize,
    pub random_strength: f64,
    pub seed: u64,
    #[serde(default)]
    pub record_trace: bool,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            learning_rate: 0.3,
            l2_regularization: 0.0,
            iterations: 900,
            depth: 4,
            bins: 64,
            random_strength: 0.1,
            seed: 0,
            record_trace: false,
        }
    }
}

impl BoostConfig {
    /// Check the configuration for a training set of `n_rows` rows.
    ///
    /// With `lambda > 0` the step must satisfy `lr * (lambda / N + 1) < 1`.
    pub fn validate(&self, n_rows: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(self.l2_regularization >= 0.0 && self.l2_regularization.is_finite()) {
            return bad(format!(
                "regularization must be non-negative, got {}",
                self.l2_regularization
            ));
        }
        if !(self.random_strength >= 0.0 && self.random_strength.is_finite()) {
            return bad(format!(
                "random strength must be non-negative, got {}",
                self.random_strength
            ));
        }
        if n_rows == 0 {
            return Err(Error::EmptyDataset);
        }
        if self.l2_regularization > 0.0 {
            let bound = self.learning_rate * (self.l2_regularization / n_rows as f64 + 1.0);
            if bound >= 1.0 {
                return bad(format!(
                    "learning_rate * (lambda / N + 1) = {bound} must be < 1"
                ));
            }
        }
        Ok(())
    }

    /// Per-iteration shrinkage factor `1 - lambda * lr / N`.
    pub fn shrinkage(&self, n_rows: usize) -> f64 {
        1.0 - self.l2_regularization * self.learning_rate / n_rows as f64
    }
}

/// One row of the training trace, describing `f_t` before iteration `t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    /// `(1/2N) ||y - f_t(x)||^2`
    pub mse: f64,
    /// Cumulative shrinkage `(1 - lambda * lr / N)^t` applied to the first tree.
    pub factor: f64,
}

pub fn write_trace_csv<W: Write>(records: &[TraceRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// A tree with its coefficient in the final sum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WeightedTreeRepr", into = "WeightedTreeRepr")]
pub struct WeightedTree {
    pub tree: FittedTree,
    pub coefficient: f64,
}

#[derive(Serialize, Deserialize)]
struct WeightedTreeRepr {
    splits: TreeStructure,
    leaf_values: Vec<f64>,
    coefficient: f64,
}

impl TryFrom<WeightedTreeRepr> for WeightedTree {
    type Error = Error;

    fn try_from(r: WeightedTreeRepr) -> Result<Self> {
        Ok(WeightedTree {
            tree: FittedTree::new(r.splits, r.leaf_values)?,
            coefficient: r.coefficient,
        })
    }
}

impl From<WeightedTree> for WeightedTreeRepr {
    fn from(w: WeightedTree) -> Self {
        WeightedTreeRepr {
            splits: w.tree.structure().clone(),
            leaf_values: w.tree.leaf_values().to_vec(),
            coefficient: w.coefficient,
        }
    }
}

/// `f_T(x) = sum_t c_t * tree_t(x)`, together with the quantizer of its training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub config: BoostConfig,
    pub quantizer: FeatureQuantizer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_names: Option<Vec<String>>,
    pub trees: Vec<WeightedTree>,
}

impl BoostedModel {
    pub fn with_feature_names(mut self, names: Option<Vec<String>>) -> Self {
        self.feature_names = names;
        self
    }

    #[inline]
    pub fn predict_row(&self, row: &[crate::data::Bin]) -> f64 {
        self.trees
            .iter()
            .map(|w| w.coefficient * w.tree.predict_row(row))
            .sum()
    }

    pub fn predict_binned(&self, rows: &BinnedRows) -> Vec<f64> {
        rows.iter().map(|row| self.predict_row(row)).collect()
    }

    /// Predict raw row-major feature rows.
    pub fn predict(&self, features: &[f64], n_features: usize) -> Result<Vec<f64>> {
        Ok(self.predict_binned(&self.quantizer.quantize_rows(features, n_features)?))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: BoostedModel = serde_json::from_str(s)?;
        // re-validate thresholds
        FeatureQuantizer::from_thresholds(
            (0..model.quantizer.n_features())
                .map(|j| model.quantizer.thresholds(j).to_vec())
                .collect(),
        )?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Step-by-step boosting state.
///
/// Tracks `f_t` at the training rows (and optionally at extra query rows)
/// in double precision with left-to-right accumulation.
pub struct Booster<'a> {
    data: &'a BinnedDataset,
    config: BoostConfig,
    sampler: TreeSampler<'a>,
    rng: Stream,
    shrink: f64,
    fitted: Vec<f64>,
    residuals: Vec<f64>,
    trees: Vec<FittedTree>,
    keep_trees: bool,
    last: Option<FittedTree>,
    queries: Option<(BinnedRows, Vec<f64>)>,
    trace: Option<Vec<TraceRecord>>,
    iteration: usize,
}

impl<'a> Booster<'a> {
    pub fn new(data: &'a BinnedDataset, config: &BoostConfig) -> Result<Self> {
        config.validate(data.n_rows())?;
        let n = data.n_rows();
        let trace = config.record_trace.then(|| {
            vec![TraceRecord {
                iteration: 0,
                mse: crate::data::half_mean_square(data.targets()),
                factor: 1.0,
            }]
        });
        Ok(Booster {
            data,
            sampler: TreeSampler::new(data),
            rng: rng::stream(config.seed, rng::streams::BOOSTING),
            shrink: config.shrinkage(n),
            config: config.clone(),
            fitted: vec![0.0; n],
            residuals: vec![0.0; n],
            trees: Vec::new(),
            keep_trees: true,
            last: None,
            queries: None,
            trace,
            iteration: 0,
        })
    }

    /// Do not retain trees; only the tracked predictions evolve.
    pub fn discard_trees(mut self) -> Self {
        self.keep_trees = false;
        self
    }

    /// Also track `f_t` at these rows.
    pub fn with_queries(mut self, rows: BinnedRows) -> Result<Self> {
        if rows.n_features() != self.data.n_features() {
            return Err(Error::shape(self.data.n_features(), rows.n_features()));
        }
        let values = vec![0.0; rows.n_rows()];
        self.queries = Some((rows, values));
        Ok(self)
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn config(&self) -> &BoostConfig {
        &self.config
    }

    /// `f_t` at the training rows.
    pub fn train_predictions(&self) -> &[f64] {
        &self.fitted
    }

    /// `f_t` at the query rows, if any were registered.
    pub fn query_predictions(&self) -> Option<&[f64]> {
        self.queries.as_ref().map(|(_, v)| v.as_slice())
    }

    pub fn last_tree(&self) -> Option<&FittedTree> {
        self.last.as_ref()
    }

    pub fn trace(&self) -> Option<&[TraceRecord]> {
        self.trace.as_deref()
    }

    /// One boosting iteration.
    pub fn step(&mut self) -> &FittedTree {
        let y = self.data.targets();
        for ((r, &t), &f) in self.residuals.iter_mut().zip(y).zip(&self.fitted) {
            *r = t - f;
        }
        let structure = self.sampler.sample(
            &self.residuals,
            self.config.depth,
            self.config.random_strength,
            &mut self.rng,
        );
        let assignment = structure.assign(self.data.rows());
        let tree = fit_leaf_values(&structure, &self.residuals, &assignment);
        let lr = self.config.learning_rate;
        let values = tree.leaf_values();
        for (f, &leaf) in self.fitted.iter_mut().zip(&assignment.leaf_of) {
            *f = self.shrink * *f + lr * values[leaf];
        }
        if let Some((rows, preds)) = self.queries.as_mut() {
            for (p, row) in preds.iter_mut().zip(rows.iter()) {
                *p = self.shrink * *p + lr * tree.predict_row(row);
            }
        }
        self.iteration += 1;
        if let Some(trace) = self.trace.as_mut() {
            let mse = y
                .iter()
                .zip(&self.fitted)
                .map(|(t, f)| (t - f) * (t - f))
                .sum::<f64>()
                / (2.0 * y.len() as f64);
            let factor = trace.last().map_or(1.0, |r| r.factor) * self.shrink;
            trace.push(TraceRecord {
                iteration: self.iteration,
                mse,
                factor,
            });
        }
        if self.keep_trees {
            self.trees.push(tree.clone());
        }
        self.last.insert(tree)
    }

    /// Run the remaining iterations up to `config.iterations`.
    pub fn run(&mut self) {
        while self.iteration < self.config.iterations {
            self.step();
        }
    }

    /// Fold the shrinkage into coefficients and return the model.
    pub fn into_model(self) -> BoostedModel {
        let lr = self.config.learning_rate;
        let mut coefficient = lr;
        let mut weights = vec![0.0; self.trees.len()];
        for w in weights.iter_mut().rev() {
            *w = coefficient;
            coefficient *= self.shrink;
        }
        BoostedModel {
            config: self.config,
            quantizer: self.data.quantizer().clone(),
            feature_names: None,
            trees: self
                .trees
                .into_iter()
                .zip(weights)
                .map(|(tree, coefficient)| WeightedTree { tree, coefficient })
                .collect(),
        }
    }
}

/// Train `config.iterations` rounds starting from `f_0 = 0`.
pub fn train(data: &BinnedDataset, config: &BoostConfig) -> Result<BoostedModel> {
    let mut booster = Booster::new(data, config)?;
    booster.run();
    Ok(booster.into_model())
}

/// Train and return the per-iteration trace (`T + 1` rows).
pub fn train_with_trace(
    data: &BinnedDataset,
    config: &BoostConfig,
) -> Result<(BoostedModel, Vec<TraceRecord>)> {
    let config = BoostConfig {
        record_trace: true,
        ..config.clone()
    };
    let mut booster = Booster::new(data, &config)?;
    booster.run();
    let trace = booster.trace.take().unwrap_or_default();
    Ok((booster.into_model(), trace))
}
