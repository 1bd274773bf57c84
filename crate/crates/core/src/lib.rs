//! Fake-review detection with a neural autoencoder decision forest.
//!
//! Reviews are turned into behavioral feature rows ([`features`]), screened
//! with nonparametric tests ([`stats`]) and classified by a model that
//! compresses each row with an autoencoder and routes the code through an
//! ensemble of soft decision trees ([`model`], [`training`]).

pub mod autoencoder;
pub mod data;
pub mod error;
pub mod features;
pub mod forest;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod stats;
pub mod training;

pub use data::{LabeledDataset, ModelFile, NormStats, Normalization};
pub use error::{Error, Result};
pub use features::{FeatureMatrix, FeatureSpec, Lexicon, ReviewRecord, Scope};
pub use metrics::{compute_metrics, confusion, EvalMetrics};
pub use model::Model;
pub use numerics::Matrix;
pub use training::{train, TrainConfig, TrainOutcome};
