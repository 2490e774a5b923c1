//! Sampling functions from the Gaussian-process posterior by boosting.
//!
//! A posterior sample is `sigma * h + f`, where `h` is a draw from the prior
//! (trees with Gaussian leaves) and `f` is boosted on the shifted labels
//! `y - sigma * h(x) + N(0, delta^2)` with `lambda = delta^2 / sigma^2`.
//! The observation noise `delta^2` is not part of a sample; add it to the
//! ensemble variance with [`EnsembleSummary::predictive_variance`].

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boosting::{BoostConfig, BoostedModel, Booster};
use crate::data::{Bin, BinnedDataset, BinnedRows};
use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::tree::{FittedTree, TreeSampler};

/// A prior draw `h(x) = scale * sum_t tree_t(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSample {
    pub scale: f64,
    pub trees: Vec<FittedTree>,
}

impl PriorSample {
    pub fn predict_row(&self, row: &[Bin]) -> f64 {
        self.scale * self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
    }

    pub fn predict_binned(&self, rows: &BinnedRows) -> Vec<f64> {
        rows.iter().map(|row| self.predict_row(row)).collect()
    }
}

/// Draw `iterations` uniformly random structures with leaf values
/// `N(0, N / max(N_j, 1))`, weighted by `1 / sqrt(iterations)`.
pub fn sample_prior<R: Rng + ?Sized>(
    data: &BinnedDataset,
    iterations: usize,
    depth: usize,
    rng: &mut R,
) -> Result<PriorSample> {
    if iterations == 0 {
        return Err(Error::InvalidConfig("prior needs at least one tree".into()));
    }
    let n = data.n_rows() as f64;
    let mut sampler = TreeSampler::new(data);
    let zeros = vec![0.0; data.n_rows()];
    let mut trees = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        // zero residuals make every score equal, so the draw is uniform
        let structure = sampler.sample(&zeros, depth, 1.0, rng);
        let counts = structure.assign(data.rows()).counts;
        let values = counts
            .iter()
            .map(|&c| {
                let z: f64 = rng.sample(StandardNormal);
                z * (n / c.max(1) as f64).sqrt()
            })
            .collect();
        trees.push(FittedTree::new(structure, values)?);
    }
    Ok(PriorSample {
        scale: 1.0 / (iterations as f64).sqrt(),
        trees,
    })
}

/// Settings for posterior sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KgbConfig {
    /// Boosting settings; `l2_regularization` and `seed` are overridden per sample.
    pub boost: BoostConfig,
    pub prior_iterations: usize,
    /// Prior scale.
    pub sigma: f64,
    /// Observation noise standard deviation.
    pub delta: f64,
}

impl Default for KgbConfig {
    fn default() -> Self {
        KgbConfig {
            boost: BoostConfig::default(),
            prior_iterations: 100,
            sigma: 1e-2,
            delta: 1e-4,
        }
    }
}

impl KgbConfig {
    /// Settings used for the synthetic heart experiment.
    pub fn heart_preset() -> Self {
        KgbConfig {
            boost: BoostConfig {
                learning_rate: 0.3,
                l2_regularization: 0.0,
                iterations: 900,
                depth: 4,
                bins: 64,
                random_strength: 0.1,
                seed: 0,
                record_trace: false,
            },
            prior_iterations: 100,
            sigma: 1e-2,
            delta: 1e-4,
        }
    }

    /// `lambda = delta^2 / sigma^2`.
    pub fn effective_l2(&self) -> f64 {
        (self.delta * self.delta) / (self.sigma * self.sigma)
    }

    pub fn validate(&self, n_rows: usize) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "delta must be positive, got {}",
                self.delta
            )));
        }
        if self.prior_iterations == 0 {
            return Err(Error::InvalidConfig("prior needs at least one tree".into()));
        }
        self.boost_config(0).validate(n_rows)
    }

    /// Boosting configuration for the sample with seed `seed`.
    pub fn boost_config(&self, seed: u64) -> BoostConfig {
        BoostConfig {
            l2_regularization: self.effective_l2(),
            seed,
            record_trace: false,
            ..self.boost.clone()
        }
    }
}

/// One posterior function `sigma * h + f`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSample {
    pub sigma: f64,
    pub delta: f64,
    pub prior: PriorSample,
    pub model: BoostedModel,
}

impl PosteriorSample {
    pub fn predict_binned(&self, rows: &BinnedRows) -> Vec<f64> {
        rows.iter()
            .map(|row| self.sigma * self.prior.predict_row(row) + self.model.predict_row(row))
            .collect()
    }

    pub fn predict(&self, features: &[f64], n_features: usize) -> Result<Vec<f64>> {
        let rows = self.model.quantizer.quantize_rows(features, n_features)?;
        Ok(self.predict_binned(&rows))
    }
}

/// Seed of ensemble member `index`.
pub fn member_seed(master: u64, index: usize) -> u64 {
    rng::derive_seed(master, index as u64)
}

fn shifted_data(
    data: &BinnedDataset,
    cfg: &KgbConfig,
    prior: &PriorSample,
    seed: u64,
) -> Result<BinnedDataset> {
    let mut noise = rng::stream(seed, streams::LABEL_NOISE);
    let targets = data
        .targets()
        .iter()
        .zip(data.rows().iter())
        .map(|(&y, row)| {
            let z: f64 = noise.sample(StandardNormal);
            y - cfg.sigma * prior.predict_row(row) + cfg.delta * z
        })
        .collect();
    data.with_targets(targets)
}

fn draw_prior(data: &BinnedDataset, cfg: &KgbConfig, seed: u64) -> Result<PriorSample> {
    let mut prior_rng = rng::stream(seed, streams::PRIOR);
    sample_prior(data, cfg.prior_iterations, cfg.boost.depth, &mut prior_rng)
}

/// Draw one posterior function, keeping all trees.
pub fn sample_posterior(
    data: &BinnedDataset,
    cfg: &KgbConfig,
    seed: u64,
) -> Result<PosteriorSample> {
    cfg.validate(data.n_rows())?;
    let prior = draw_prior(data, cfg, seed)?;
    let shifted = shifted_data(data, cfg, &prior, seed)?;
    let mut booster = Booster::new(&shifted, &cfg.boost_config(seed))?;
    booster.run();
    Ok(PosteriorSample {
        sigma: cfg.sigma,
        delta: cfg.delta,
        prior,
        model: booster.into_model(),
    })
}

/// Values of one posterior function at `queries` without storing boosted
/// trees. Agrees with [`sample_posterior`] for the same seed.
pub fn sample_posterior_at(
    data: &BinnedDataset,
    cfg: &KgbConfig,
    seed: u64,
    queries: &BinnedRows,
) -> Result<Vec<f64>> {
    cfg.validate(data.n_rows())?;
    let prior = draw_prior(data, cfg, seed)?;
    let shifted = shifted_data(data, cfg, &prior, seed)?;
    let mut booster = Booster::new(&shifted, &cfg.boost_config(seed))?
        .discard_trees()
        .with_queries(queries.clone())?;
    booster.run();
    let boosted = booster.query_predictions().unwrap_or_default();
    Ok(queries
        .iter()
        .zip(boosted)
        .map(|(row, f)| cfg.sigma * prior.predict_row(row) + f)
        .collect())
}

/// Pointwise mean and unbiased variance across ensemble members.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub members: usize,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl EnsembleSummary {
    /// Variance of a new observation: ensemble variance plus `delta^2`.
    pub fn predictive_variance(&self, delta: f64) -> Vec<f64> {
        self.variance.iter().map(|v| v + delta * delta).collect()
    }
}

/// Summarize member predictions (`predictions[member][point]`).
pub fn summarize(predictions: &[Vec<f64>]) -> Result<EnsembleSummary> {
    let k = predictions.len();
    if k < 2 {
        return Err(Error::InvalidConfig(format!(
            "variance needs at least two members, got {k}"
        )));
    }
    let width = predictions[0].len();
    if let Some(p) = predictions.iter().find(|p| p.len() != width) {
        return Err(Error::shape(width, p.len()));
    }
    let mut mean = vec![0.0; width];
    for p in predictions {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= k as f64);
    let mut variance = vec![0.0; width];
    for p in predictions {
        for ((s, v), m) in variance.iter_mut().zip(p).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    variance.iter_mut().for_each(|s| *s /= (k - 1) as f64);
    Ok(EnsembleSummary {
        members: k,
        mean,
        variance,
    })
}

/// Member predictions at `queries` for members `0..members`, computed in
/// parallel and returned in member order.
pub fn ensemble_predictions(
    data: &BinnedDataset,
    cfg: &KgbConfig,
    members: usize,
    master_seed: u64,
    queries: &BinnedRows,
) -> Result<Vec<Vec<f64>>> {
    (0..members)
        .into_par_iter()
        .map(|i| sample_posterior_at(data, cfg, member_seed(master_seed, i), queries))
        .collect()
}

/// Train `members >= 2` posterior samples and summarize them at `queries`.
pub fn ensemble(
    data: &BinnedDataset,
    cfg: &KgbConfig,
    members: usize,
    master_seed: u64,
    queries: &BinnedRows,
) -> Result<EnsembleSummary> {
    if members < 2 {
        return Err(Error::InvalidConfig(format!(
            "variance needs at least two members, got {members}"
        )));
    }
    summarize(&ensemble_predictions(
        data,
        cfg,
        members,
        master_seed,
        queries,
    )?)
}
