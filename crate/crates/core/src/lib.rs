//! Gradient boosting with randomized oblivious trees, viewed as a
//! kernel method with a Gaussian-process posterior.

pub mod boosting;
pub mod data;
pub mod error;
pub mod fixtures;
pub mod oracle;
pub mod posterior;
pub mod rng;
pub mod synthetic;
pub mod tree;
pub mod uncertainty;
pub mod verify;

pub use boosting::{train, BoostConfig, BoostedModel, Booster};
pub use data::{BinnedDataset, FeatureQuantizer, RawDataset};
pub use error::{Error, Result};
pub use posterior::{ensemble, sample_posterior, EnsembleSummary, KgbConfig, PosteriorSample};
pub use tree::{FittedTree, SplitCandidate, TreeSampler, TreeStructure};
