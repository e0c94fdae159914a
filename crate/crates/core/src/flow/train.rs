//! Two-phase maximum-likelihood training: the Gaussianization layer alone
//! first, then the whole flow jointly, keeping the parameters with the best
//! validation negative log-likelihood.

use std::io::Write;
use std::path::Path;

use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::batchnorm::Mode;
use super::model::{FlowArch, FlowGrads, FlowModel};
use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::seed::{rng_for, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub arch: FlowArch,
    /// Epochs fitting only the Gaussianization layer.
    pub epochs_phase1: usize,
    /// Epochs fitting the whole flow.
    pub epochs_phase2: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: FlowArch::default(),
            epochs_phase1: 100,
            epochs_phase2: 100,
            batch_size: 256,
            optimizer: AdamConfig::default(),
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.epochs_phase1 == 0 || self.epochs_phase2 == 0 || self.batch_size == 0 {
            return Err(Error::Config("flow epoch counts and batch size must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("flow.batch_size must be at least 2 for batch normalization".into()));
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return Err(Error::Config("flow.optimizer.learning_rate must be positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config("flow.validation_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Gaussianization,
    Joint,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Gaussianization => "gaussianization",
            Phase::Joint => "joint",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub phase: Phase,
    pub train_nll: f64,
    pub val_nll: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedFlow {
    pub model: FlowModel,
    pub metrics: Vec<EpochMetrics>,
    /// Validation NLL of the returned parameters.
    pub best_val_nll: f64,
}

impl TrainedFlow {
    pub fn write_metrics_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "epoch,phase,train_nll,val_nll")?;
        for m in &self.metrics {
            writeln!(f, "{},{},{:?},{:?}", m.epoch, m.phase.as_str(), m.train_nll, m.val_nll)?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Training-mode negative mean log-likelihood of `batch` and its gradients.
pub fn loss_and_gradients(batch: ArrayView2<'_, f64>, model: &FlowModel) -> Result<(f64, FlowGrads)> {
    let pass = model.nll_and_gradients(batch, Mode::Train, false)?;
    Ok((pass.nll, pass.grads))
}

/// Mean evaluation-mode negative log-likelihood.
pub fn mean_nll(model: &FlowModel, x: ArrayView2<'_, f64>) -> Result<f64> {
    let lp = model.log_density_batch(x)?;
    Ok(-lp.mean().unwrap_or(f64::NAN))
}

pub fn train_flow(data: &FeatureMatrix, config: &TrainConfig) -> Result<TrainedFlow> {
    config.validate()?;
    let n = data.n_rows();
    if data.n_cols() == 0 {
        return Err(Error::InvalidInput("flow training needs at least one feature".into()));
    }
    if n < 2 * config.batch_size {
        return Err(Error::InvalidInput(format!(
            "flow training needs at least {} rows for batch size {}, got {n}",
            2 * config.batch_size,
            config.batch_size
        )));
    }
    data.check_finite()?;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(config.seed, &[stream::SPLIT, 0xF10]));
    let n_val = ((config.validation_fraction * n as f64).round() as usize).clamp(1, n - 2);
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let x = data.values();
    let x_train = x.select(Axis(0), &train_idx);
    let x_val = x.select(Axis(0), val_idx);

    let mut model = FlowModel::init(x_train.view(), &config.arch, config.seed)?;
    let mut metrics = Vec::new();
    let mut epoch_counter = 0usize;

    // Rows of `x` are re-indexed into `x_train` positions for batching.
    let local: Vec<usize> = (0..train_idx.len()).collect();
    train_idx.clone_from(&local);

    if model.gauss_enabled {
        let shapes: Vec<usize> = model.trainable().iter().take(FlowModel::GAUSS_TENSORS).map(|t| t.len()).collect();
        let mut opt = Adam::new(config.optimizer, &shapes);
        for _ in 0..config.epochs_phase1 {
            epoch_counter += 1;
            let train_nll = run_epoch(&mut model, &mut opt, x_train.view(), &mut train_idx, config, epoch_counter, true)?;
            let val_nll = mean_nll(&model, x_val.view())?;
            log::debug!("flow epoch {epoch_counter} (gaussianization): train {train_nll:.4} val {val_nll:.4}");
            metrics.push(EpochMetrics {
                epoch: epoch_counter,
                phase: Phase::Gaussianization,
                train_nll,
                val_nll,
            });
        }
    }

    let shapes: Vec<usize> = model.trainable().iter().map(|t| t.len()).collect();
    let mut opt = Adam::new(config.optimizer, &shapes);
    let mut best: Option<(f64, FlowModel)> = None;
    for _ in 0..config.epochs_phase2 {
        epoch_counter += 1;
        let train_nll = run_epoch(&mut model, &mut opt, x_train.view(), &mut train_idx, config, epoch_counter, false)?;
        // a model that cannot score the validation set is never kept
        let val_nll = mean_nll(&model, x_val.view()).unwrap_or(f64::INFINITY);
        log::debug!("flow epoch {epoch_counter} (joint): train {train_nll:.4} val {val_nll:.4}");
        metrics.push(EpochMetrics {
            epoch: epoch_counter,
            phase: Phase::Joint,
            train_nll,
            val_nll,
        });
        if val_nll.is_finite() && best.as_ref().is_none_or(|(b, _)| val_nll < *b) {
            best = Some((val_nll, model.clone()));
        }
    }
    let (best_val_nll, model) = best.ok_or_else(|| Error::numeric("flow training", "validation NLL never finite"))?;
    Ok(TrainedFlow {
        model,
        metrics,
        best_val_nll,
    })
}

fn run_epoch(
    model: &mut FlowModel,
    opt: &mut Adam,
    x: ArrayView2<'_, f64>,
    idx: &mut [usize],
    config: &TrainConfig,
    epoch: usize,
    gauss_only: bool,
) -> Result<f64> {
    idx.shuffle(&mut rng_for(config.seed, &[stream::FLOW_SHUFFLE, epoch as u64]));
    let mut total = 0.0;
    let mut count = 0usize;
    for (b, chunk) in idx.chunks(config.batch_size).enumerate() {
        if chunk.len() < 2 {
            continue;
        }
        let batch = x.select(Axis(0), chunk);
        let pass = match model.nll_and_gradients(batch.view(), Mode::Train, gauss_only) {
            Ok(p) => p,
            Err(Error::Numeric { .. }) => {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    loss: f64::NAN,
                })
            }
            Err(e) => return Err(e),
        };
        if !pass.nll.is_finite() || pass.grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                batch: b,
                loss: pass.nll,
            });
        }
        total += pass.nll * chunk.len() as f64;
        count += chunk.len();
        if !gauss_only {
            model.update_running_stats(&pass, chunk.len());
        }
        let mut params = model.trainable_mut();
        if gauss_only {
            params.truncate(FlowModel::GAUSS_TENSORS);
        }
        opt.step(&mut params, &pass.grads);
    }
    Ok(total / count.max(1) as f64)
}
