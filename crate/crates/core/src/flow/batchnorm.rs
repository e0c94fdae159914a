//! Batch normalization as an invertible flow layer.
//!
//! `y = (x − m) / sqrt(v + eps) · exp(log_gamma) + beta`, where `(m, v)` are
//! batch statistics in training mode and running statistics in evaluation mode.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    /// Log of the per-dimension positive gain.
    pub log_gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
}

pub struct BatchNormCache {
    x_hat: Array2<f64>,
    inv_std: Array1<f64>,
    mode: Mode,
    batch_mean: Array1<f64>,
    batch_var: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads {
    pub log_gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

impl BatchNormParams {
    pub fn new(dim: usize, momentum: f64, eps: f64) -> Result<Self> {
        if !(momentum > 0.0 && momentum < 1.0) {
            return Err(Error::Config(format!("batch-norm momentum {momentum} outside (0, 1)")));
        }
        if eps.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::Config(format!("batch-norm eps must be positive, got {eps}")));
        }
        Ok(BatchNormParams {
            log_gamma: Array1::zeros(dim),
            beta: Array1::zeros(dim),
            running_mean: Array1::zeros(dim),
            running_var: Array1::ones(dim),
            momentum,
            eps,
        })
    }

    /// A layer that is exactly the identity in evaluation mode.
    pub fn identity(dim: usize, eps: f64) -> Self {
        let mut bn = Self::new(dim, 0.1, eps).expect("valid defaults");
        bn.running_var.fill(1.0 - eps);
        bn
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    pub fn forward_cached(&self, x: ArrayView2<'_, f64>, mode: Mode) -> Result<(Array2<f64>, Array1<f64>, BatchNormCache)> {
        let n = x.nrows();
        let (mean, var) = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(Error::InvalidInput("training-mode batch norm needs at least two rows".into()));
                }
                let mean = x.mean_axis(Axis(0)).expect("non-empty");
                let var = x.var_axis(Axis(0), 0.0);
                (mean, var)
            }
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let x_hat = (&x - &mean) * &inv_std;
        let gain = self.log_gamma.mapv(f64::exp);
        let y = &x_hat * &gain + &self.beta;
        let ld_row: f64 = Zip::from(&self.log_gamma).and(&inv_std).fold(0.0, |acc, &lg, &is| acc + lg + is.ln());
        let ld = Array1::from_elem(n, ld_row);
        Ok((
            y,
            ld,
            BatchNormCache {
                x_hat,
                inv_std,
                mode,
                batch_mean: mean,
                batch_var: var,
            },
        ))
    }

    pub fn backward(&self, cache: &BatchNormCache, grad_y: ArrayView2<'_, f64>, grad_log_det: &[f64]) -> (BatchNormGrads, Array2<f64>) {
        let n = grad_y.nrows() as f64;
        let gld_total: f64 = grad_log_det.iter().sum();
        let g_beta = grad_y.sum_axis(Axis(0));
        let gain = self.log_gamma.mapv(f64::exp);
        let g_lg = (&grad_y * &cache.x_hat).sum_axis(Axis(0)) * &gain + gld_total;
        let g_xhat = &grad_y * &gain;
        let grad_x = match cache.mode {
            Mode::Eval => &g_xhat * &cache.inv_std,
            Mode::Train => {
                let mean_g = g_xhat.mean_axis(Axis(0)).expect("non-empty");
                let mean_gx = (&g_xhat * &cache.x_hat).mean_axis(Axis(0)).expect("non-empty");
                let mut gx = (&g_xhat - &mean_g) - &(&cache.x_hat * &mean_gx);
                gx *= &cache.inv_std;
                // log-det depends on the batch variance: ∂/∂x of −½ Σ ln(v + eps)
                let ld_term = &cache.x_hat * &cache.inv_std.mapv(|is| -gld_total * is / n);
                gx + ld_term
            }
        };
        (
            BatchNormGrads {
                log_gamma: g_lg,
                beta: g_beta,
            },
            grad_x,
        )
    }

    /// Blend the statistics of a training batch into the running estimates.
    pub fn update_running(&mut self, cache: &BatchNormCache, batch_rows: usize) {
        if cache.mode != Mode::Train {
            return;
        }
        let unbias = batch_rows as f64 / (batch_rows as f64 - 1.0);
        let m = self.momentum;
        Zip::from(&mut self.running_mean)
            .and(&cache.batch_mean)
            .for_each(|r, &b| *r = (1.0 - m) * *r + m * b);
        Zip::from(&mut self.running_var)
            .and(&cache.batch_var)
            .for_each(|r, &b| *r = (1.0 - m) * *r + m * b * unbias);
    }

    /// Evaluation-mode inverse of a single vector.
    pub fn inverse_vec(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .enumerate()
            .map(|(d, &v)| {
                let x_hat = (v - self.beta[d]) * (-self.log_gamma[d]).exp();
                x_hat * (self.running_var[d] + self.eps).sqrt() + self.running_mean[d]
            })
            .collect()
    }
}
