use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::batchnorm::{BatchNormCache, BatchNormParams, Mode};
use super::gauss::GaussLayerParams;
use super::made::{MadeCache, MadeLayerParams};
use crate::error::{Error, Result};
use crate::numeric::LN_SQRT_2PI;
use crate::seed::{rng_for, stream, Rng};

/// Architecture of the Gaussianization + masked autoregressive flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowArch {
    /// Sigmoid clusters per dimension in the Gaussianization layer.
    pub clusters: usize,
    /// Number of MADE + batch-norm blocks.
    pub maf_layers: usize,
    /// Hidden layer widths inside each MADE.
    pub hidden_sizes: Vec<usize>,
    /// Disable to bypass the Gaussianization layer entirely.
    pub gaussianize: bool,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    /// Scale of the initial MADE output weights; small values start the
    /// flow near the identity.
    pub output_init_scale: f64,
}

impl Default for FlowArch {
    fn default() -> Self {
        FlowArch {
            clusters: 6,
            maf_layers: 5,
            hidden_sizes: vec![100, 100, 100],
            gaussianize: true,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            output_init_scale: 0.01,
        }
    }
}

impl FlowArch {
    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 {
            return Err(Error::Config("flow.clusters must be at least 1".into()));
        }
        if self.hidden_sizes.iter().any(|&h| h == 0) {
            return Err(Error::Config("flow.hidden_sizes entries must be positive".into()));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return Err(Error::Config("flow.bn_momentum must lie in (0, 1)".into()));
        }
        if self.bn_eps.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::Config("flow.bn_eps must be positive".into()));
        }
        Ok(())
    }
}

/// Per-column affine map applied before the flow.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: Array1::zeros(dim),
            std: Array1::ones(dim),
        }
    }

    pub fn fit(x: ArrayView2<'_, f64>) -> Result<Self> {
        let mean = x.mean_axis(Axis(0)).ok_or_else(|| Error::InvalidInput("empty data".into()))?;
        let std = x.std_axis(Axis(0), 1.0);
        if let Some(j) = std.iter().position(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidInput(format!("column {j} is constant; cannot standardize")));
        }
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        (&x - &self.mean) / &self.std
    }

    /// `−Σ ln std`, the log-Jacobian of the map.
    pub fn log_det(&self) -> f64 {
        -self.std.iter().map(|s| s.ln()).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MafBlock {
    pub made: MadeLayerParams,
    pub norm: BatchNormParams,
}

/// A fitted density `p_θ(x)` defined by a composed normalizing flow onto a
/// standard normal base distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    dim: usize,
    pub standardizer: Standardizer,
    pub gauss: GaussLayerParams,
    pub gauss_enabled: bool,
    pub blocks: Vec<MafBlock>,
}

/// Gradients in the order of [`FlowModel::trainable`].
pub type FlowGrads = Vec<Vec<f64>>;

/// Result of one differentiated pass over a batch.
pub struct GradientPass {
    pub nll: f64,
    pub grads: FlowGrads,
    norm_caches: Vec<BatchNormCache>,
}

impl FlowModel {
    /// Flow that is the identity apart from the standardizer: Gaussianization
    /// bypassed, zero MADE parameters and unit batch norm.
    pub fn identity(dim: usize, arch: &FlowArch) -> Self {
        let blocks = (0..arch.maf_layers)
            .map(|_| MafBlock {
                made: MadeLayerParams::zeros(dim, &arch.hidden_sizes),
                norm: BatchNormParams::identity(dim, arch.bn_eps),
            })
            .collect();
        FlowModel {
            dim,
            standardizer: Standardizer::identity(dim),
            gauss: GaussLayerParams::new(Array2::zeros((dim, arch.clusters.max(1))), Array2::zeros((dim, arch.clusters.max(1))))
                .expect("finite zeros"),
            gauss_enabled: false,
            blocks,
        }
    }

    /// Random initialization with a data-fitted standardizer and
    /// Gaussianization locations placed at marginal quantiles.
    pub fn init(data: ArrayView2<'_, f64>, arch: &FlowArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let dim = data.ncols();
        let standardizer = Standardizer::fit(data)?;
        let y = standardizer.apply(data);
        let m_count = arch.clusters;
        let mut mu = Array2::zeros((dim, m_count));
        let log_s = Array2::from_elem((dim, m_count), (1.0 / m_count as f64).max(0.05).ln());
        for d in 0..dim {
            let mut col: Vec<f64> = y.column(d).to_vec();
            col.sort_by(f64::total_cmp);
            for m in 0..m_count {
                let q = (m as f64 + 0.5) / m_count as f64;
                let idx = ((q * col.len() as f64) as usize).min(col.len() - 1);
                mu[[d, m]] = col[idx];
            }
        }
        let mut rng = rng_for(seed, &[stream::FLOW_INIT]);
        let blocks = (0..arch.maf_layers)
            .map(|_| {
                Ok(MafBlock {
                    made: MadeLayerParams::random(dim, &arch.hidden_sizes, arch.output_init_scale, &mut rng),
                    norm: BatchNormParams::new(dim, arch.bn_momentum, arch.bn_eps)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FlowModel {
            dim,
            standardizer,
            gauss: GaussLayerParams::new(mu, log_s)?,
            gauss_enabled: arch.gaussianize,
            blocks,
        })
    }

    pub fn from_parts(standardizer: Standardizer, gauss: GaussLayerParams, gauss_enabled: bool, blocks: Vec<MafBlock>) -> Result<Self> {
        let dim = standardizer.mean.len();
        if standardizer.std.len() != dim || gauss.dim() != dim || blocks.iter().any(|b| b.made.dim() != dim || b.norm.dim() != dim) {
            return Err(Error::Config("flow components disagree on dimension".into()));
        }
        Ok(FlowModel {
            dim,
            standardizer,
            gauss,
            gauss_enabled,
            blocks,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn clusters(&self) -> usize {
        self.gauss.clusters()
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.blocks.first().map(|b| b.made.hidden_sizes()).unwrap_or_default()
    }

    /// Trainable tensors in declaration order.
    pub fn trainable(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![slice(&self.gauss.mu), slice(&self.gauss.log_s)];
        for b in &self.blocks {
            for lin in &b.made.hidden {
                out.push(slice(&lin.weight));
                out.push(slice1(&lin.bias));
            }
            out.push(slice(&b.made.output.weight));
            out.push(slice1(&b.made.output.bias));
            out.push(slice1(&b.norm.log_gamma));
            out.push(slice1(&b.norm.beta));
        }
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        out.push(self.gauss.mu.as_slice_mut().expect("standard layout"));
        out.push(self.gauss.log_s.as_slice_mut().expect("standard layout"));
        for b in &mut self.blocks {
            for lin in &mut b.made.hidden {
                out.push(lin.weight.as_slice_mut().expect("standard layout"));
                out.push(lin.bias.as_slice_mut().expect("standard layout"));
            }
            out.push(b.made.output.weight.as_slice_mut().expect("standard layout"));
            out.push(b.made.output.bias.as_slice_mut().expect("standard layout"));
            out.push(b.norm.log_gamma.as_slice_mut().expect("standard layout"));
            out.push(b.norm.beta.as_slice_mut().expect("standard layout"));
        }
        out
    }

    /// Number of leading tensors that belong to the Gaussianization layer.
    pub const GAUSS_TENSORS: usize = 2;

    fn check_rows(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.dim {
            return Err(Error::Mismatch(format!("model dimension {} but input has {} columns", self.dim, x.ncols())));
        }
        if let Some(((i, j), v)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite input {v} at row {i}, column {j}")));
        }
        Ok(())
    }

    /// Standardize and Gaussianize; returns the Gaussianized rows and the
    /// per-row log-determinant so far.
    pub(crate) fn elementwise_stage(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
        let y = self.standardizer.apply(x);
        let base = self.standardizer.log_det();
        if self.gauss_enabled {
            let (z, ld) = self.gauss.forward(y.view());
            let ld = ld + base;
            (y, z, ld)
        } else {
            let n = y.nrows();
            (y.clone(), y, Array1::from_elem(n, base))
        }
    }

    /// Run the MAF blocks in evaluation mode, accumulating into `log_det`.
    pub(crate) fn maf_stage(&self, mut h: Array2<f64>, log_det: &mut Array1<f64>) -> Result<Array2<f64>> {
        for (l, b) in self.blocks.iter().enumerate() {
            let c = b.made.forward_cached(h.view())?;
            *log_det += &c.log_det;
            let (out, ld, _) = b.norm.forward_cached(c.u.view(), Mode::Eval)?;
            *log_det += &ld;
            h = out;
            if h.iter().any(|v| !v.is_finite()) || log_det.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("flow layer {}", l + 1), "non-finite activation"));
            }
        }
        Ok(h)
    }

    /// Map raw rows to the base space in evaluation mode: `(Z, log|det J|)`.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        self.check_rows(x)?;
        let (_, z0, mut ld) = self.elementwise_stage(x);
        if z0.iter().any(|v| !v.is_finite()) || ld.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("flow layer 0 (Gaussianization)", "non-finite output"));
        }
        let z = self.maf_stage(z0, &mut ld)?;
        Ok((z, ld))
    }

    pub fn flow_forward(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let m = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let (z, ld) = self.forward_batch(m)?;
        Ok((z.into_raw_vec_and_offset().0, ld[0]))
    }

    /// `log p_θ(x)` for every row, in evaluation mode.
    pub fn log_density_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let (z, ld) = self.forward_batch(x)?;
        Ok(base_log_density(z.view()) + ld)
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        let m = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(self.log_density_batch(m)?[0])
    }

    /// Map a base-space vector back to data space.
    pub fn inverse(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim {
            return Err(Error::Mismatch(format!("base vector length {} for a {}-D flow", z.len(), self.dim)));
        }
        let mut h = z.to_vec();
        for b in self.blocks.iter().rev() {
            h = b.norm.inverse_vec(&h);
            h = b.made.inverse_vec(&h)?;
        }
        let y = if self.gauss_enabled {
            h.iter()
                .enumerate()
                .map(|(d, &v)| self.gauss.inverse_element(d, v))
                .collect::<Result<Vec<_>>>()?
        } else {
            h
        };
        Ok(y.iter()
            .enumerate()
            .map(|(d, &v)| v * self.standardizer.std[d] + self.standardizer.mean[d])
            .collect())
    }

    /// Draw `n` rows from the model by inverting base-distribution draws.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Array2<f64>> {
        let mut rng = rng_for(seed, &[stream::FLOW_SAMPLE]);
        let mut out = Array2::zeros((n, self.dim));
        for i in 0..n {
            let z = standard_normal_vec(self.dim, &mut rng);
            let x = self.inverse(&z)?;
            out.row_mut(i).assign(&Array1::from(x));
        }
        Ok(out)
    }

    /// Negative mean log-likelihood of `batch` and its gradient with respect
    /// to every trainable tensor. With `gauss_only`, the loss is that of the
    /// Gaussianization layer alone (MAF blocks skipped) and the remaining
    /// gradients are zero.
    pub fn nll_and_gradients(&self, batch: ArrayView2<'_, f64>, mode: Mode, gauss_only: bool) -> Result<GradientPass> {
        self.check_rows(batch)?;
        let n = batch.nrows();
        let inv_n = 1.0 / n as f64;
        let (y, z0, mut ld) = self.elementwise_stage(batch);

        let mut made_caches: Vec<MadeCache> = Vec::new();
        let mut norm_caches: Vec<BatchNormCache> = Vec::new();
        let mut h = z0.clone();
        if !gauss_only {
            for b in &self.blocks {
                let c = b.made.forward_cached(h.view())?;
                ld += &c.log_det;
                let (out, nld, nc) = b.norm.forward_cached(c.u.view(), mode)?;
                ld += &nld;
                h = out;
                made_caches.push(c);
                norm_caches.push(nc);
            }
        }
        let log_p = base_log_density(h.view()) + &ld;
        let nll = -log_p.sum() * inv_n;
        if !nll.is_finite() {
            return Err(Error::numeric("flow loss", format!("non-finite negative log-likelihood {nll}")));
        }

        let gld = vec![-inv_n; n];
        let mut grad_h = h.mapv(|v| v * inv_n);
        let mut block_grads = Vec::with_capacity(self.blocks.len());
        if !gauss_only {
            for (l, b) in self.blocks.iter().enumerate().rev() {
                let (ng, g_u) = b.norm.backward(&norm_caches[l], grad_h.view(), &gld);
                let (mg, g_in) = b.made.backward(&made_caches[l], g_u.view(), &gld);
                grad_h = g_in;
                block_grads.push((mg, ng));
            }
            block_grads.reverse();
        }

        let mut grads: FlowGrads = Vec::new();
        if self.gauss_enabled {
            let gg = self.gauss.backward(y.view(), z0.view(), grad_h.view(), &gld);
            grads.push(gg.mu.into_raw_vec_and_offset().0);
            grads.push(gg.log_s.into_raw_vec_and_offset().0);
        } else {
            grads.push(vec![0.0; self.gauss.mu.len()]);
            grads.push(vec![0.0; self.gauss.log_s.len()]);
        }
        if gauss_only {
            for t in self.trainable().iter().skip(Self::GAUSS_TENSORS) {
                grads.push(vec![0.0; t.len()]);
            }
        } else {
            for (mg, ng) in block_grads {
                for (w, b) in mg.hidden {
                    grads.push(w.into_raw_vec_and_offset().0);
                    grads.push(b.into_raw_vec_and_offset().0);
                }
                grads.push(mg.output.0.into_raw_vec_and_offset().0);
                grads.push(mg.output.1.into_raw_vec_and_offset().0);
                grads.push(ng.log_gamma.into_raw_vec_and_offset().0);
                grads.push(ng.beta.into_raw_vec_and_offset().0);
            }
        }
        Ok(GradientPass { nll, grads, norm_caches })
    }

    /// Fold the batch statistics of a training pass into the running
    /// batch-norm estimates.
    pub fn update_running_stats(&mut self, pass: &GradientPass, batch_rows: usize) {
        for (b, c) in self.blocks.iter_mut().zip(&pass.norm_caches) {
            b.norm.update_running(c, batch_rows);
        }
    }
}

fn slice(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn slice1(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

/// Row-wise standard normal log density.
pub fn base_log_density(z: ArrayView2<'_, f64>) -> Array1<f64> {
    let d = z.ncols() as f64;
    z.map_axis(Axis(1), |row| -0.5 * row.dot(&row) - d * LN_SQRT_2PI)
}

pub(crate) fn standard_normal_vec(dim: usize, rng: &mut Rng) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}
