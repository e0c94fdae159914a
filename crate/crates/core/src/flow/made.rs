//! Masked autoregressive layer: `u_j = (x_j − μ_j(x_<j)) · exp(−α_j(x_<j))`.
//!
//! Weights are stored already multiplied by their binary masks and gradients
//! are masked the same way, so masked entries stay exactly zero.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::seed::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedLinear {
    /// `out × in`, zero wherever `mask` is zero.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub mask: Array2<f64>,
}

impl MaskedLinear {
    fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = x.dot(&self.weight.t());
        out += &self.bias;
        out
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MadeLayerParams {
    dim: usize,
    pub hidden: Vec<MaskedLinear>,
    /// Produces `[μ_1..μ_D, α_1..α_D]`.
    pub output: MaskedLinear,
}

/// Degree of hidden unit `k` in a `dim`-dimensional MADE (cycles `1..dim−1`).
fn hidden_degree(k: usize, dim: usize) -> usize {
    if dim <= 1 {
        1
    } else {
        k % (dim - 1) + 1
    }
}

fn build_mask(out_deg: &[usize], in_deg: &[usize], strict: bool) -> Array2<f64> {
    Array2::from_shape_fn((out_deg.len(), in_deg.len()), |(o, i)| {
        let ok = if strict { out_deg[o] > in_deg[i] } else { out_deg[o] >= in_deg[i] };
        if ok {
            1.0
        } else {
            0.0
        }
    })
}

/// The masks for a MADE with the given hidden sizes, input to output.
pub fn made_masks(dim: usize, hidden_sizes: &[usize]) -> (Vec<Array2<f64>>, Array2<f64>) {
    let in_deg: Vec<usize> = (1..=dim).collect();
    let mut prev = in_deg.clone();
    let mut masks = Vec::with_capacity(hidden_sizes.len());
    for &h in hidden_sizes {
        let deg: Vec<usize> = (0..h).map(|k| hidden_degree(k, dim)).collect();
        masks.push(build_mask(&deg, &prev, false));
        prev = deg;
    }
    let out_deg: Vec<usize> = (1..=dim).chain(1..=dim).collect();
    let out_mask = build_mask(&out_deg, &prev, true);
    (masks, out_mask)
}

/// Intermediate values kept for the backward pass.
pub struct MadeCache {
    /// Input to each dense sublayer; `acts[0]` is the layer input.
    acts: Vec<Array2<f64>>,
    neg_alpha_exp: Array2<f64>,
    pub u: Array2<f64>,
    pub log_det: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct MadeGrads {
    pub hidden: Vec<(Array2<f64>, Array1<f64>)>,
    pub output: (Array2<f64>, Array1<f64>),
}

impl MadeLayerParams {
    /// Zero-parameter layer: `μ = 0`, `α = 0`, identity map.
    pub fn zeros(dim: usize, hidden_sizes: &[usize]) -> Self {
        let (masks, out_mask) = made_masks(dim, hidden_sizes);
        let hidden = masks
            .into_iter()
            .map(|m| MaskedLinear {
                weight: Array2::zeros(m.dim()),
                bias: Array1::zeros(m.nrows()),
                mask: m,
            })
            .collect();
        let output = MaskedLinear {
            weight: Array2::zeros(out_mask.dim()),
            bias: Array1::zeros(2 * dim),
            mask: out_mask,
        };
        MadeLayerParams { dim, hidden, output }
    }

    /// Random hidden weights; output weights scaled by `output_scale` so the
    /// layer starts close to the identity.
    pub fn random(dim: usize, hidden_sizes: &[usize], output_scale: f64, rng: &mut Rng) -> Self {
        let mut layer = Self::zeros(dim, hidden_sizes);
        for lin in layer.hidden.iter_mut() {
            let bound = (3.0 / lin.in_dim().max(1) as f64).sqrt();
            Zip::from(&mut lin.weight).and(&lin.mask).for_each(|w, &m| {
                *w = m * rng.random_range(-bound..bound);
            });
        }
        let bound = output_scale * (3.0 / layer.output.in_dim().max(1) as f64).sqrt();
        Zip::from(&mut layer.output.weight)
            .and(&layer.output.mask)
            .for_each(|w, &m| *w = m * rng.random_range(-bound..=bound));
        layer
    }

    /// Rebuild from stored weights, re-deriving masks from the hidden sizes.
    pub fn from_parts(dim: usize, hidden: Vec<(Array2<f64>, Array1<f64>)>, output: (Array2<f64>, Array1<f64>)) -> Result<Self> {
        let sizes: Vec<usize> = hidden.iter().map(|(w, _)| w.nrows()).collect();
        let mut layer = Self::zeros(dim, &sizes);
        for (lin, (w, b)) in layer.hidden.iter_mut().zip(hidden) {
            if w.dim() != lin.weight.dim() || b.len() != lin.bias.len() {
                return Err(Error::Config(format!(
                    "hidden weight shape {:?} inconsistent with mask {:?}",
                    w.dim(),
                    lin.weight.dim()
                )));
            }
            lin.weight = w * &lin.mask;
            lin.bias = b;
        }
        let (w, b) = output;
        if w.dim() != layer.output.weight.dim() || b.len() != 2 * dim {
            return Err(Error::Config(format!(
                "output weight shape {:?} inconsistent with mask {:?}",
                w.dim(),
                layer.output.weight.dim()
            )));
        }
        layer.output.weight = w * &layer.output.mask;
        layer.output.bias = b;
        Ok(layer)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.hidden.iter().map(MaskedLinear::out_dim).collect()
    }

    pub fn forward_cached(&self, x: ArrayView2<'_, f64>) -> Result<MadeCache> {
        if x.ncols() != self.dim {
            return Err(Error::Config(format!("MADE layer expects {} inputs, got {}", self.dim, x.ncols())));
        }
        let mut acts = Vec::with_capacity(self.hidden.len() + 1);
        acts.push(x.to_owned());
        for lin in &self.hidden {
            let mut h = lin.forward(acts.last().expect("non-empty").view());
            h.mapv_inplace(f64::tanh);
            acts.push(h);
        }
        let out = self.output.forward(acts.last().expect("non-empty").view());
        let d = self.dim;
        let mu = out.slice(s![.., ..d]);
        let alpha = out.slice(s![.., d..]);
        let neg_alpha_exp = alpha.mapv(|a| (-a).exp());
        let u = (&x - &mu) * &neg_alpha_exp;
        let log_det = alpha.sum_axis(Axis(1)).mapv(|v| -v);
        Ok(MadeCache {
            acts,
            neg_alpha_exp,
            u,
            log_det,
        })
    }

    /// Batch forward: `(U, per-row log_det)`.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        let c = self.forward_cached(x)?;
        Ok((c.u, c.log_det))
    }

    pub fn forward_vec(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let m = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Config(e.to_string()))?;
        let (u, ld) = self.forward(m)?;
        Ok((u.into_raw_vec_and_offset().0, ld[0]))
    }

    /// Gradients w.r.t. parameters and input, given `∂L/∂u` and the per-row
    /// weight of the log-determinant in the loss.
    pub fn backward(&self, cache: &MadeCache, grad_u: ArrayView2<'_, f64>, grad_log_det: &[f64]) -> (MadeGrads, Array2<f64>) {
        let d = self.dim;
        let n = grad_u.nrows();
        let mut grad_out = Array2::zeros((n, 2 * d));
        {
            let (mut gmu, mut galpha) = grad_out.multi_slice_mut((s![.., ..d], s![.., d..]));
            Zip::from(&mut gmu)
                .and(&grad_u)
                .and(&cache.neg_alpha_exp)
                .for_each(|g, &gu, &e| *g = -gu * e);
            Zip::indexed(&mut galpha)
                .and(&grad_u)
                .and(&cache.u)
                .for_each(|(i, _), g, &gu, &u| *g = -gu * u - grad_log_det[i]);
        }
        let last = cache.acts.last().expect("non-empty");
        let g_wo = grad_out.t().dot(last) * &self.output.mask;
        let g_bo = grad_out.sum_axis(Axis(0));
        let mut g_act = grad_out.dot(&self.output.weight);

        let mut hidden_grads = Vec::with_capacity(self.hidden.len());
        for (l, lin) in self.hidden.iter().enumerate().rev() {
            let act = &cache.acts[l + 1];
            let g_pre = &g_act * &act.mapv(|a| 1.0 - a * a);
            let g_w = g_pre.t().dot(&cache.acts[l]) * &lin.mask;
            let g_b = g_pre.sum_axis(Axis(0));
            g_act = g_pre.dot(&lin.weight);
            hidden_grads.push((g_w, g_b));
        }
        hidden_grads.reverse();

        let grad_x = g_act + &(&grad_u * &cache.neg_alpha_exp);
        (
            MadeGrads {
                hidden: hidden_grads,
                output: (g_wo, g_bo),
            },
            grad_x,
        )
    }

    /// Inverse for a single vector, solved coordinate by coordinate.
    pub fn inverse_vec(&self, u: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim;
        let mut x = vec![0.0; d];
        for j in 0..d {
            let m = ArrayView2::from_shape((1, d), &x[..]).map_err(|e| Error::Config(e.to_string()))?;
            let out = {
                let mut a = m.to_owned();
                for lin in &self.hidden {
                    a = lin.forward(a.view());
                    a.mapv_inplace(f64::tanh);
                }
                self.output.forward(a.view())
            };
            let mu = out[[0, j]];
            let alpha = out[[0, d + j]];
            x[j] = u[j] * alpha.exp() + mu;
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;

    #[test]
    fn zero_parameters_give_identity() {
        let layer = MadeLayerParams::zeros(3, &[8, 8]);
        let (u, ld) = layer.forward_vec(&[0.1, -0.2, 0.3]).unwrap();
        assert_eq!(u, vec![0.1, -0.2, 0.3]);
        assert_eq!(ld, 0.0);
    }

    #[test]
    fn shape_mismatch_is_a_config_error() {
        let layer = MadeLayerParams::zeros(3, &[4]);
        assert!(matches!(layer.forward_vec(&[1.0, 2.0]), Err(Error::Config(_))));
    }

    #[test]
    fn first_output_depends_on_nothing_but_its_own_input() {
        let mut rng = rng_for(3, &[]);
        let layer = MadeLayerParams::random(4, &[10], 1.0, &mut rng);
        let (a, _) = layer.forward_vec(&[0.5, 1.0, -1.0, 2.0]).unwrap();
        let (b, _) = layer.forward_vec(&[0.5, -3.0, 4.0, 0.0]).unwrap();
        assert_eq!(a[0], b[0]);
    }

    #[test]
    fn masks_are_strictly_autoregressive_end_to_end() {
        // connectivity: product of masks must be strictly lower triangular
        for dim in 1..6 {
            let (hidden, out) = made_masks(dim, &[7, 5]);
            let mut conn = hidden[0].clone();
            conn = hidden[1].dot(&conn);
            let c = out.dot(&conn);
            for o in 0..2 * dim {
                for i in 0..dim {
                    if i >= o % dim {
                        assert_eq!(c[[o, i]], 0.0, "dim={dim} out={o} in={i}");
                    }
                }
            }
        }
    }

    #[test]
    fn inverse_recovers_input() {
        let mut rng = rng_for(5, &[]);
        let layer = MadeLayerParams::random(4, &[12, 12], 1.0, &mut rng);
        let x = [0.3, -1.2, 0.8, 2.0];
        let (u, _) = layer.forward_vec(&x).unwrap();
        let back = layer.inverse_vec(&u).unwrap();
        for (a, b) in back.iter().zip(x) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
