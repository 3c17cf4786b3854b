//! Fairness-aware influence scores for training data.
//!
//! The crate estimates how removing a single training example would move a
//! model's fairness surrogate, using the empirical neural tangent kernel at a
//! frozen snapshot, and uses those scores to prune data before retraining.
//!
//! Module map:
//!
//! - [`ndcore`]: the two-layer ReLU model, its exact parameter gradients and the logistic loss.
//! - [`surrogates`]: decomposable fairness surrogates and their per-example coefficients.
//! - [`influence`]: kernel, pairwise and aggregated influence scores, and the first-order check.
//! - [`training`]: Adam training with an optional fairness regularizer.
//! - [`data`]: datasets, CSV I/O, synthetic generators, balancing and splits.
//! - [`pipeline`]: metrics, prune strategies and the prune-and-retrain sweep.
//! - [`config`]: the run configuration shared by the command-line tool.

pub mod config;
pub mod data;
pub mod error;
pub mod influence;
pub mod ndcore;
pub mod pipeline;
pub mod stats;
pub mod surrogates;
pub mod training;

pub use data::Dataset;
pub use error::{Error, Result};
pub use influence::{InfluenceConfig, InfluenceTable};
pub use ndcore::{Architecture, Label, ModelParams, ModelSnapshot};
pub use surrogates::{SurrogateKind, SurrogateSpec};
pub use training::{TrainConfig, TrainLog};
