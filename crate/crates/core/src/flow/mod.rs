//! Normalizing flow over the feature distribution: standardization, an
//! elementwise Gaussianization layer and masked autoregressive blocks with
//! batch normalization, trained by maximum likelihood.

pub mod batchnorm;
mod checkpoint;
pub mod gauss;
pub mod made;
pub mod model;
pub mod train;

pub use batchnorm::{BatchNormParams, Mode};
pub use gauss::GaussLayerParams;
pub use made::MadeLayerParams;
pub use model::{base_log_density, FlowArch, FlowGrads, FlowModel, GradientPass, MafBlock, Standardizer};
pub use train::{loss_and_gradients, mean_nll, train_flow, EpochMetrics, Phase, TrainConfig, TrainedFlow};
