//! Elementwise Gaussianization: each coordinate goes through a normalized
//! mixture-of-sigmoids CDF and then the standard normal quantile function.
//!
//! `G_j(y) = Φ⁻¹( (1/M) Σ_m σ((y − μ_jm) / s_jm) )`, with `s_jm = exp(log_s_jm)`.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::numeric::{ln_sigmoid_derivative, log_sum_exp, normal_cdf, probit, sigmoid, std_normal_ln_pdf};

/// CDF values are clamped to `[CDF_CLAMP, 1 − CDF_CLAMP]` before the probit.
pub const CDF_CLAMP: f64 = 1e-7;

const BISECT_MAX_ITER: usize = 200;
const BISECT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussLayerParams {
    /// `D × M` locations.
    pub mu: Array2<f64>,
    /// `D × M` log-scales.
    pub log_s: Array2<f64>,
}

/// Per-element result of the Gaussianization map.
#[derive(Debug, Clone, Copy)]
pub struct GaussElement {
    pub z: f64,
    /// `ln |dG/dy|`.
    pub log_det: f64,
    pub clamped: bool,
}

impl GaussLayerParams {
    pub fn new(mu: Array2<f64>, log_s: Array2<f64>) -> Result<Self> {
        if mu.dim() != log_s.dim() {
            return Err(Error::Config(format!(
                "Gaussianization location shape {:?} differs from scale shape {:?}",
                mu.dim(),
                log_s.dim()
            )));
        }
        if mu.ncols() == 0 {
            return Err(Error::Config("Gaussianization needs at least one cluster".into()));
        }
        if mu.iter().chain(log_s.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Config("Gaussianization parameters must be finite".into()));
        }
        Ok(GaussLayerParams { mu, log_s })
    }

    pub fn dim(&self) -> usize {
        self.mu.nrows()
    }

    pub fn clusters(&self) -> usize {
        self.mu.ncols()
    }

    /// Normalized mixture CDF before clamping, and `ln dc/dy`.
    fn cdf_and_log_slope(&self, d: usize, y: f64) -> (f64, f64) {
        let m_count = self.clusters();
        let mut csum = 0.0;
        let mut slope = 0.0;
        for m in 0..m_count {
            let inv_s = (-self.log_s[[d, m]]).exp();
            let t = (y - self.mu[[d, m]]) * inv_s;
            let sg = sigmoid(t);
            csum += sg;
            slope += sg * (1.0 - sg) * inv_s;
        }
        let ln_m = (m_count as f64).ln();
        let log_slope = if slope > 1e-280 {
            slope.ln() - ln_m
        } else {
            // far tails: every σ' underflows, so sum in log space
            let terms: Vec<f64> = (0..m_count)
                .map(|m| {
                    let t = (y - self.mu[[d, m]]) * (-self.log_s[[d, m]]).exp();
                    ln_sigmoid_derivative(t) - self.log_s[[d, m]]
                })
                .collect();
            log_sum_exp(&terms) - ln_m
        };
        (csum / m_count as f64, log_slope)
    }

    /// Mixture CDF at `y` for dimension `d`, unclamped.
    pub fn cdf(&self, d: usize, y: f64) -> f64 {
        self.cdf_and_log_slope(d, y).0
    }

    pub fn element(&self, d: usize, y: f64) -> GaussElement {
        let (c, log_slope) = self.cdf_and_log_slope(d, y);
        let clamped = !(CDF_CLAMP..=1.0 - CDF_CLAMP).contains(&c);
        let z = probit(c.clamp(CDF_CLAMP, 1.0 - CDF_CLAMP));
        GaussElement {
            z,
            log_det: log_slope - std_normal_ln_pdf(z),
            clamped,
        }
    }

    /// Apply the layer to a single vector. Returns `(z, log_det)`.
    pub fn forward_vec(&self, y: &[f64]) -> Result<(Vec<f64>, f64)> {
        if y.len() != self.dim() {
            return Err(Error::Mismatch(format!("input length {} for a {}-D layer", y.len(), self.dim())));
        }
        let mut z = Vec::with_capacity(y.len());
        let mut ld = 0.0;
        for (d, &v) in y.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!("non-finite input {v} at coordinate {d}")));
            }
            let e = self.element(d, v);
            z.push(e.z);
            ld += e.log_det;
        }
        Ok((z, ld))
    }

    /// Batch forward: `(Z, per-row log_det)`.
    pub fn forward(&self, y: ArrayView2<'_, f64>) -> (Array2<f64>, Array1<f64>) {
        let (n, dim) = y.dim();
        let mut z = Array2::zeros((n, dim));
        let mut ld = Array1::zeros(n);
        for i in 0..n {
            let mut acc = 0.0;
            for d in 0..dim {
                let e = self.element(d, y[[i, d]]);
                z[[i, d]] = e.z;
                acc += e.log_det;
            }
            ld[i] = acc;
        }
        (z, ld)
    }

    /// Parameter gradients given upstream `∂L/∂z` and the per-row weight of
    /// the log-determinant in the loss.
    pub fn backward(
        &self,
        y: ArrayView2<'_, f64>,
        z: ArrayView2<'_, f64>,
        grad_z: ArrayView2<'_, f64>,
        grad_log_det: &[f64],
    ) -> GaussGrads {
        let (n, dim) = y.dim();
        let m_count = self.clusters();
        let inv_m = 1.0 / m_count as f64;
        let mut g_mu = Array2::zeros((dim, m_count));
        let mut g_ls = Array2::zeros((dim, m_count));
        let mut sig = vec![0.0; m_count];
        let mut tt = vec![0.0; m_count];
        let mut lw = vec![0.0; m_count];
        for i in 0..n {
            let gld = grad_log_det[i];
            for d in 0..dim {
                let yv = y[[i, d]];
                let zv = z[[i, d]];
                let mut csum = 0.0;
                for m in 0..m_count {
                    let t = (yv - self.mu[[d, m]]) * (-self.log_s[[d, m]]).exp();
                    tt[m] = t;
                    sig[m] = sigmoid(t);
                    csum += sig[m];
                    lw[m] = ln_sigmoid_derivative(t) - self.log_s[[d, m]];
                }
                let c = csum * inv_m;
                let clamped = !(CDF_CLAMP..=1.0 - CDF_CLAMP).contains(&c);
                let lse = log_sum_exp(&lw);
                let gz_total = grad_z[[i, d]] + gld * zv;
                let gc = if clamped { 0.0 } else { gz_total / std_normal_ln_pdf(zv).exp() };
                for m in 0..m_count {
                    let s_inv = (-self.log_s[[d, m]]).exp();
                    let dsig = sig[m] * (1.0 - sig[m]);
                    let w = (lw[m] - lse).exp();
                    let curv = 1.0 - 2.0 * sig[m];
                    let dc_dmu = -inv_m * dsig * s_inv;
                    let dc_dls = -inv_m * dsig * tt[m];
                    let dlns_dmu = -w * curv * s_inv;
                    let dlns_dls = -w * (curv * tt[m] + 1.0);
                    g_mu[[d, m]] += gc * dc_dmu + gld * dlns_dmu;
                    g_ls[[d, m]] += gc * dc_dls + gld * dlns_dls;
                }
            }
        }
        GaussGrads { mu: g_mu, log_s: g_ls }
    }

    /// Solve `G_d(y) = z` for `y` by bisection on the (unclamped) mixture CDF.
    pub fn inverse_element(&self, d: usize, z: f64) -> Result<f64> {
        if !z.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite base value {z}")));
        }
        let target = normal_cdf(z);
        if target <= 0.0 || target >= 1.0 {
            return Err(Error::numeric(
                format!("Gaussianization inverse, dimension {d}"),
                format!("base value {z} maps outside the open unit interval"),
            ));
        }
        let row_mu = self.mu.row(d);
        let row_ls = self.log_s.row(d);
        let max_s = row_ls.iter().copied().fold(f64::NEG_INFINITY, f64::max).exp();
        let mut lo = row_mu.iter().copied().fold(f64::INFINITY, f64::min) - 10.0 * max_s;
        let mut hi = row_mu.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 10.0 * max_s;
        let span = hi - lo;
        let mut widen = 0;
        while self.cdf(d, lo) > target {
            lo -= span * (1 << widen) as f64;
            widen += 1;
            if widen > 60 {
                return Err(Error::numeric("Gaussianization inverse", "cannot bracket from below"));
            }
        }
        widen = 0;
        while self.cdf(d, hi) < target {
            hi += span * (1 << widen) as f64;
            widen += 1;
            if widen > 60 {
                return Err(Error::numeric("Gaussianization inverse", "cannot bracket from above"));
            }
        }
        for _ in 0..BISECT_MAX_ITER {
            let mid = 0.5 * (lo + hi);
            if hi - lo <= BISECT_TOL * (1.0 + mid.abs()) {
                return Ok(mid);
            }
            if self.cdf(d, mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Err(Error::numeric(
            format!("Gaussianization inverse, dimension {d}"),
            format!("bisection did not converge in {BISECT_MAX_ITER} iterations"),
        ))
    }
}

#[derive(Debug, Clone)]
pub struct GaussGrads {
    pub mu: Array2<f64>,
    pub log_s: Array2<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn single() -> GaussLayerParams {
        GaussLayerParams::new(array![[0.0]], array![[0.0]]).unwrap()
    }

    #[test]
    fn symmetric_single_cluster_maps_zero_to_zero() {
        let (z, _) = single().forward_vec(&[0.0]).unwrap();
        assert_eq!(z[0], 0.0);
    }

    #[test]
    fn single_cluster_is_increasing() {
        let g = single();
        let lo = g.forward_vec(&[-1.0]).unwrap().0[0];
        let hi = g.forward_vec(&[1.0]).unwrap().0[0];
        assert!(hi > lo);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        assert!(matches!(single().forward_vec(&[f64::NAN]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn far_tail_is_clamped_but_finite() {
        let e = single().element(0, 1e4);
        assert!(e.clamped);
        assert!(e.z.is_finite() && e.log_det.is_finite());
    }

    #[test]
    fn two_cluster_value_matches_quadrature_oracle() {
        // Oracle: integrate the mixture density (derivative of the CDF) from
        // far in the left tail with Simpson's rule, then invert Φ by bisection
        // on an independently integrated normal CDF.
        let g = GaussLayerParams::new(array![[-1.0, 1.0]], array![[0.0, 0.0]]).unwrap();
        let x = 0.3;
        let dens = |t: f64| {
            let a = 1.0 / (1.0 + (-(t + 1.0)).exp());
            let b = 1.0 / (1.0 + (-(t - 1.0)).exp());
            0.5 * (a * (1.0 - a) + b * (1.0 - b))
        };
        let simpson = |f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize| {
            let h = (b - a) / n as f64;
            let mut s = f(a) + f(b);
            for k in 1..n {
                s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        };
        let cdf = simpson(&dens, -60.0, x, 400_000);
        let phi = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let norm_cdf = |z: f64| 0.5 + simpson(&phi, 0.0, z, 20_000);
        let (mut lo, mut hi) = (-8.0, 8.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if norm_cdf(mid) < cdf {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let oracle = 0.5 * (lo + hi);
        let (z, _) = g.forward_vec(&[x]).unwrap();
        assert!((z[0] - oracle).abs() < 1e-10, "z={} oracle={}", z[0], oracle);
    }

    #[test]
    fn log_det_matches_finite_difference() {
        let g = GaussLayerParams::new(array![[-1.0, 0.5, 2.0]], array![[0.1, -0.3, 0.4]]).unwrap();
        for &y in &[-2.0, -0.4, 0.0, 0.9, 3.0] {
            let h = 1e-5;
            let zp = g.element(0, y + h).z;
            let zm = g.element(0, y - h).z;
            let fd = ((zp - zm) / (2.0 * h)).ln();
            assert!((g.element(0, y).log_det - fd).abs() < 1e-7, "y={y}");
        }
    }

    #[test]
    fn inverse_recovers_input() {
        let g = GaussLayerParams::new(array![[-1.0, 0.5, 2.0]], array![[0.1, -0.3, 0.4]]).unwrap();
        for &y in &[-4.0, -0.4, 0.0, 0.9, 5.0] {
            let z = g.element(0, y).z;
            assert!((g.inverse_element(0, z).unwrap() - y).abs() < 1e-8);
        }
    }
}
