//! Flow checkpoint encoding.
//!
//! Header words: `D, M, layer count, gaussianize flag, hidden layer count,
//! hidden widths...`. Arrays: standardizer mean and std, Gaussianization
//! locations and log-scales, then per block the MADE weights and biases, the
//! batch-norm log-gain, shift, running mean, running variance and
//! `[momentum, eps]`.

use std::path::Path;

use ndarray::{Array1, Array2};

use super::batchnorm::BatchNormParams;
use super::gauss::GaussLayerParams;
use super::made::MadeLayerParams;
use super::model::{FlowModel, MafBlock, Standardizer};
use crate::container::{Container, MAGIC_FLOW};
use crate::error::{Error, Result};

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::format("flow checkpoint", msg)
}

impl FlowModel {
    pub fn to_container(&self) -> Container {
        let d = self.dim();
        let hidden = self.hidden_sizes();
        let mut c = Container::new(MAGIC_FLOW);
        c.header = vec![
            d as u32,
            self.clusters() as u32,
            self.blocks.len() as u32,
            u32::from(self.gauss_enabled),
            hidden.len() as u32,
        ];
        c.header.extend(hidden.iter().map(|&h| h as u32));
        let mut push = |v: &[f64]| c.arrays.push(v.to_vec());
        push(self.standardizer.mean.as_slice().expect("contiguous"));
        push(self.standardizer.std.as_slice().expect("contiguous"));
        push(self.gauss.mu.as_slice().expect("contiguous"));
        push(self.gauss.log_s.as_slice().expect("contiguous"));
        for b in &self.blocks {
            for lin in &b.made.hidden {
                push(lin.weight.as_slice().expect("contiguous"));
                push(lin.bias.as_slice().expect("contiguous"));
            }
            push(b.made.output.weight.as_slice().expect("contiguous"));
            push(b.made.output.bias.as_slice().expect("contiguous"));
            push(b.norm.log_gamma.as_slice().expect("contiguous"));
            push(b.norm.beta.as_slice().expect("contiguous"));
            push(b.norm.running_mean.as_slice().expect("contiguous"));
            push(b.norm.running_var.as_slice().expect("contiguous"));
            push(&[b.norm.momentum, b.norm.eps]);
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.magic != MAGIC_FLOW {
            return Err(fmt_err("not a flow checkpoint"));
        }
        let d = c.header_word(0, "dim")? as usize;
        let m = c.header_word(1, "clusters")? as usize;
        let layers = c.header_word(2, "layers")? as usize;
        let gauss_enabled = match c.header_word(3, "gaussianize")? {
            0 => false,
            1 => true,
            v => return Err(fmt_err(format!("gaussianize flag {v} is not 0 or 1"))),
        };
        let n_hidden = c.header_word(4, "hidden layer count")? as usize;
        if c.header.len() != 5 + n_hidden {
            return Err(fmt_err(format!("header has {} words, expected {}", c.header.len(), 5 + n_hidden)));
        }
        let hidden: Vec<usize> = c.header[5..].iter().map(|&h| h as usize).collect();
        if d == 0 || m == 0 || hidden.contains(&0) {
            return Err(fmt_err("zero dimension in header"));
        }
        // each block owns a known number of arrays; reject before allocating
        let per_block = 2 * n_hidden + 2 + 5;
        if c.arrays.len() != 4 + layers.saturating_mul(per_block) {
            return Err(fmt_err(format!("{} arrays do not match {layers} layers", c.arrays.len())));
        }

        let mut cur = c.array_cursor();
        let vec1 = |v: &[f64]| Array1::from(v.to_vec());
        let mat = |v: &[f64], r: usize, k: usize| {
            Array2::from_shape_vec((r, k), v.to_vec()).map_err(|e| fmt_err(e.to_string()))
        };
        let mean = vec1(cur.take("standardizer mean", Some(d))?);
        let std = vec1(cur.take("standardizer std", Some(d))?);
        if std.iter().any(|&s| !(s > 0.0 && s.is_finite())) || mean.iter().any(|v| !v.is_finite()) {
            return Err(fmt_err("standardizer must be finite with positive scales"));
        }
        let dm = d.checked_mul(m).ok_or_else(|| fmt_err("header overflow"))?;
        let mu = mat(cur.take("gauss mu", Some(dm))?, d, m)?;
        let log_s = mat(cur.take("gauss log_s", Some(dm))?, d, m)?;
        let gauss = GaussLayerParams::new(mu, log_s)?;

        let mut blocks = Vec::with_capacity(layers);
        for l in 0..layers {
            let mut hw = Vec::with_capacity(n_hidden);
            let mut prev = d;
            for (k, &h) in hidden.iter().enumerate() {
                let n = h.checked_mul(prev).ok_or_else(|| fmt_err("header overflow"))?;
                let w = mat(cur.take(&format!("block {l} hidden {k} weight"), Some(n))?, h, prev)?;
                let b = vec1(cur.take(&format!("block {l} hidden {k} bias"), Some(h))?);
                hw.push((w, b));
                prev = h;
            }
            let w = mat(cur.take(&format!("block {l} output weight"), Some(2 * d * prev))?, 2 * d, prev)?;
            let b = vec1(cur.take(&format!("block {l} output bias"), Some(2 * d))?);
            let made = MadeLayerParams::from_parts(d, hw, (w, b))?;
            let log_gamma = vec1(cur.take("bn log_gamma", Some(d))?);
            let beta = vec1(cur.take("bn beta", Some(d))?);
            let running_mean = vec1(cur.take("bn running_mean", Some(d))?);
            let running_var = vec1(cur.take("bn running_var", Some(d))?);
            let hyper = cur.take("bn hyperparameters", Some(2))?;
            let mut norm = BatchNormParams::new(d, hyper[0], hyper[1])?;
            if running_var.iter().any(|&v| !(v >= 0.0)) {
                return Err(fmt_err("negative running variance"));
            }
            norm.log_gamma = log_gamma;
            norm.beta = beta;
            norm.running_mean = running_mean;
            norm.running_var = running_var;
            blocks.push(MafBlock { made, norm });
        }
        cur.finish()?;
        FlowModel::from_parts(Standardizer { mean, std }, gauss, gauss_enabled, blocks)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_container().encode()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_container(&Container::decode_expecting(bytes, MAGIC_FLOW)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write_to(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read_from(path, MAGIC_FLOW)?)
    }
}
