//! Fully connected regression network with ReLU hidden layers, inverted
//! dropout during training and early stopping on a held-out split.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::seed::{rng_for, stream, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub optimizer: AdamConfig,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub validation_fraction: f64,
    /// Multiplier on the He-uniform initialization bound; 0 starts from zeros.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: vec![64, 128, 64],
            dropout: 0.2,
            optimizer: AdamConfig {
                learning_rate: 1e-5,
                ..AdamConfig::default()
            },
            max_epochs: 200,
            batch_size: 128,
            patience: 10,
            validation_fraction: 0.1,
            init_scale: 1.0,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("model.mlp.dropout must be in [0, 1), got {}", self.dropout)));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("model.mlp.hidden sizes must be positive".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("model.mlp batch_size and max_epochs must be positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config("model.mlp.validation_fraction must be in (0, 1)".into()));
        }
        if !(self.optimizer.learning_rate > 0.0) || !(self.init_scale >= 0.0) {
            return Err(Error::Config("model.mlp learning_rate must be positive and init_scale non-negative".into()));
        }
        Ok(())
    }
}

/// Dense layers `x W_l + b_l`; ReLU between layers, none after the last.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub dropout_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlpEpoch {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

struct Pass {
    /// Inputs to each layer (post-activation, post-dropout).
    inputs: Vec<Array2<f64>>,
    /// Dropout scale per hidden unit (`mask / (1 − p)`), hidden layers only.
    masks: Vec<Array2<f64>>,
    output: Array1<f64>,
}

impl MlpModel {
    pub fn new(weights: Vec<Array2<f64>>, biases: Vec<Array1<f64>>, dropout_rate: f64) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::InvalidInput("network needs matching, non-empty weight and bias lists".into()));
        }
        for l in 0..weights.len() {
            if biases[l].len() != weights[l].ncols() || (l > 0 && weights[l].nrows() != weights[l - 1].ncols()) {
                return Err(Error::InvalidInput(format!("layer {l} shape does not chain")));
            }
        }
        if weights.last().map(|w| w.ncols()) != Some(1) {
            return Err(Error::InvalidInput("the last layer must have a single output".into()));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::InvalidInput(format!("dropout rate {dropout_rate} outside [0, 1)")));
        }
        Ok(MlpModel {
            weights,
            biases,
            dropout_rate,
        })
    }

    fn init(d: usize, config: &MlpConfig, rng: &mut Rng) -> Self {
        let mut sizes = vec![d];
        sizes.extend(&config.hidden);
        sizes.push(1);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in sizes.windows(2) {
            let bound = config.init_scale * (6.0 / w[0] as f64).sqrt();
            weights.push(Array2::from_shape_fn((w[0], w[1]), |_| {
                if bound > 0.0 {
                    rng.random_range(-bound..bound)
                } else {
                    0.0
                }
            }));
            biases.push(Array1::zeros(w[1]));
        }
        MlpModel {
            weights,
            biases,
            dropout_rate: config.dropout,
        }
    }

    pub fn n_features(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    fn check_dim(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.n_features() {
            return Err(Error::InvalidInput(format!(
                "network has {} inputs, data has {} columns",
                self.n_features(),
                x.ncols()
            )));
        }
        Ok(())
    }

    fn forward(&self, x: ArrayView2<'_, f64>, dropout: Option<&mut Rng>) -> Pass {
        let mut inputs = vec![x.to_owned()];
        let mut masks = Vec::new();
        let mut rng = dropout;
        let last = self.weights.len() - 1;
        for l in 0..last {
            let mut a = inputs[l].dot(&self.weights[l]) + &self.biases[l];
            a.mapv_inplace(|v| v.max(0.0));
            if let Some(r) = rng.as_deref_mut().filter(|_| self.dropout_rate > 0.0) {
                let keep = 1.0 - self.dropout_rate;
                let m = Array2::from_shape_fn(a.dim(), |_| if r.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
                a *= &m;
                masks.push(m);
            } else {
                masks.push(Array2::ones((0, 0)));
            }
            inputs.push(a);
        }
        let out = inputs[last].dot(&self.weights[last]) + &self.biases[last];
        Pass {
            inputs,
            masks,
            output: out.column(0).to_owned(),
        }
    }

    fn backward(&self, pass: &Pass, y: ArrayView1<'_, f64>) -> (f64, Vec<Array2<f64>>, Vec<Array1<f64>>) {
        let n = y.len() as f64;
        let resid = &pass.output - &y;
        let mse = resid.dot(&resid) / n;
        let mut delta = (resid * (2.0 / n)).insert_axis(Axis(1));
        let nl = self.weights.len();
        let mut gw = vec![Array2::zeros((0, 0)); nl];
        let mut gb = vec![Array1::zeros(0); nl];
        for l in (0..nl).rev() {
            // keep row-major so the flat gradient lines up with the weights
            gw[l] = pass.inputs[l].t().dot(&delta).as_standard_layout().into_owned();
            gb[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut back = delta.dot(&self.weights[l].t());
                // ReLU derivative from the layer output; dropout scales the same entries
                back.zip_mut_with(&pass.inputs[l], |g, &a| {
                    if a <= 0.0 {
                        *g = 0.0
                    }
                });
                let m = &pass.masks[l - 1];
                if m.len() > 0 {
                    back *= m;
                }
                delta = back;
            }
        }
        (mse, gw, gb)
    }

    /// Evaluation-mode predictions.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        self.check_dim(x)?;
        Ok(self.forward(x, None).output)
    }

    /// Evaluation-mode mean squared error and its gradients with respect to
    /// every weight and bias.
    pub fn mse_and_gradients(&self, x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> Result<(f64, Vec<Array2<f64>>, Vec<Array1<f64>>)> {
        self.check_dim(x)?;
        if x.nrows() != y.len() || y.is_empty() {
            return Err(Error::InvalidInput("rows and responses must match and be non-empty".into()));
        }
        Ok(self.backward(&self.forward(x, None), y))
    }

    fn flat_params(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.as_slice_mut().expect("standard layout"));
            out.push(b.as_slice_mut().expect("standard layout"));
        }
        out
    }
}

fn mse(model: &MlpModel, x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
    let r = model.forward(x, None).output - y;
    r.dot(&r) / y.len() as f64
}

pub fn fit_mlp(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, config: &MlpConfig) -> Result<MlpModel> {
    fit_mlp_traced(x, y, config).map(|(m, _)| m)
}

/// Fit and also return the per-epoch training and validation MSE.
pub fn fit_mlp_traced(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, config: &MlpConfig) -> Result<(MlpModel, Vec<MlpEpoch>)> {
    config.validate()?;
    let (n, d) = x.dim();
    if n != y.len() {
        return Err(Error::InvalidInput(format!("{n} feature rows but {} responses", y.len())));
    }
    if n < 2 * config.batch_size || d == 0 {
        return Err(Error::InvalidInput(format!(
            "network training needs at least {} rows, got {n}",
            2 * config.batch_size
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite training data".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(config.seed, &[stream::SPLIT, stream::MLP]));
    let n_val = ((n as f64 * config.validation_fraction).ceil() as usize).clamp(1, n - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let xv = x.select(Axis(0), val_idx);
    let yv = y.select(Axis(0), val_idx);
    let xt = x.select(Axis(0), train_idx);
    let yt = y.select(Axis(0), train_idx);

    let mut rng = rng_for(config.seed, &[stream::MLP, 0]);
    let mut model = MlpModel::init(d, config, &mut rng);
    let shapes: Vec<usize> = model.weights.iter().zip(&model.biases).flat_map(|(w, b)| [w.len(), b.len()]).collect();
    let mut adam = Adam::new(config.optimizer, &shapes);
    let mut best = model.clone();
    let mut best_val = mse(&model, xv.view(), yv.view());
    let mut stale = 0;
    let mut history = Vec::new();
    let mut rows: Vec<usize> = (0..xt.nrows()).collect();
    for epoch in 0..config.max_epochs {
        let mut erng = rng_for(config.seed, &[stream::MLP, 1 + epoch as u64]);
        rows.shuffle(&mut erng);
        let mut total = 0.0;
        let mut seen = 0usize;
        for (b, chunk) in rows.chunks(config.batch_size).enumerate() {
            let xb = xt.select(Axis(0), chunk);
            let yb = yt.select(Axis(0), chunk);
            let pass = model.forward(xb.view(), Some(&mut erng));
            let (loss, gw, gb) = model.backward(&pass, yb.view());
            let finite = loss.is_finite() && gw.iter().all(|g| g.iter().all(|v| v.is_finite())) && gb.iter().all(|g| g.iter().all(|v| v.is_finite()));
            if !finite {
                return Err(Error::Diverged { epoch, batch: b, loss });
            }
            let grads: Vec<Vec<f64>> = gw.into_iter().zip(gb).flat_map(|(w, b)| [w.iter().copied().collect(), b.to_vec()]).collect();
            adam.step(&mut model.flat_params(), &grads);
            total += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let val = mse(&model, xv.view(), yv.view());
        history.push(MlpEpoch {
            epoch,
            train_mse: total / seen as f64,
            val_mse: val,
        });
        if !val.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: 0,
                loss: val,
            });
        }
        if val < best_val {
            best_val = val;
            best = model.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience.max(1) {
                break;
            }
        }
    }
    Ok((best, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_hidden_layer_on_positive_inputs() {
        let m = MlpModel::new(
            vec![Array2::eye(2), array![[2.0], [-1.0]]],
            vec![Array1::zeros(2), array![0.5]],
            0.0,
        )
        .unwrap();
        let x = array![[1.0, 2.0], [3.0, 0.5]];
        let p = m.predict(x.view()).unwrap();
        assert_eq!(p, array![0.5, 6.0]);
    }

    #[test]
    fn shapes_must_chain() {
        assert!(MlpModel::new(vec![Array2::zeros((2, 3)), Array2::zeros((2, 1))], vec![Array1::zeros(3), Array1::zeros(1)], 0.0).is_err());
    }

    #[test]
    fn too_few_rows_for_batch() {
        let x = Array2::zeros((100, 1));
        let y = Array1::zeros(100);
        assert!(fit_mlp(x.view(), y.view(), &MlpConfig::default()).is_err());
    }
}
