//! Controlled feature selection with normalizing-flow null samplers and
//! holdout randomization tests.

pub mod config;
pub mod container;
pub mod data;
pub mod error;
pub mod experiments;
pub mod flow;
pub mod hrt;
pub mod models;
pub mod numeric;
pub mod optim;
pub mod sampler;
pub mod seed;

pub use data::FeatureMatrix;
pub use error::{Error, Result};
pub use flow::{FlowModel, TrainConfig};
