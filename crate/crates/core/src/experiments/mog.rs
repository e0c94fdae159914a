//! Mixture of equicorrelated Gaussians used as a synthetic feature source.

use nalgebra::{Cholesky, DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, LN_SQRT_2PI};
use crate::seed::{rng_for, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoGSpec {
    pub weights: Vec<f64>,
    /// Per-component mean, shared by every coordinate.
    pub means: Vec<f64>,
    /// Per-component off-diagonal correlation (unit variances).
    pub correlations: Vec<f64>,
    pub dim: usize,
}

impl MoGSpec {
    /// Three strongly correlated components at 0, 20 and 40.
    pub fn benchmark(dim: usize) -> Self {
        MoGSpec {
            weights: vec![0.371, 0.258, 0.371],
            means: vec![0.0, 20.0, 40.0],
            correlations: vec![0.982, 0.976, 0.970],
            dim,
        }
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 || self.means.len() != k || self.correlations.len() != k {
            return Err(Error::Config("mixture weights, means and correlations must have equal non-zero length".into()));
        }
        if self.dim == 0 {
            return Err(Error::Config("mixture dimension must be at least 1".into()));
        }
        if self.weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("mixture weights must be non-negative".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("mixture weights sum to {total}, not 1")));
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("mixture means must be finite".into()));
        }
        let lower = if self.dim > 1 { -1.0 / (self.dim as f64 - 1.0) } else { f64::NEG_INFINITY };
        for &r in &self.correlations {
            if !(r > lower && r < 1.0) {
                return Err(Error::Config(format!(
                    "correlation {r} makes a {}-dimensional component covariance non-positive-definite",
                    self.dim
                )));
            }
        }
        Ok(())
    }

    /// Unit-diagonal covariance of component `k`.
    pub fn covariance(&self, k: usize) -> Array2<f64> {
        let r = self.correlations[k];
        Array2::from_shape_fn((self.dim, self.dim), |(a, b)| if a == b { 1.0 } else { r })
    }
}

/// Precomputed factorizations for density evaluation and sampling.
#[derive(Debug, Clone)]
pub struct MoGDensity {
    spec: MoGSpec,
    chol: Vec<DMatrix<f64>>,
    log_norm: Vec<f64>,
}

impl MoGDensity {
    pub fn new(spec: MoGSpec) -> Result<Self> {
        spec.validate()?;
        let d = spec.dim;
        let mut chol = Vec::new();
        let mut log_norm = Vec::new();
        for k in 0..spec.n_components() {
            let c = spec.covariance(k);
            let m = DMatrix::from_fn(d, d, |a, b| c[[a, b]]);
            let l = Cholesky::new(m)
                .ok_or_else(|| Error::Config(format!("component {k} covariance is not positive definite")))?
                .l();
            let half_logdet: f64 = (0..d).map(|i| l[(i, i)].ln()).sum();
            log_norm.push(spec.weights[k].ln() - half_logdet - d as f64 * LN_SQRT_2PI);
            chol.push(l);
        }
        Ok(MoGDensity { spec, chol, log_norm })
    }

    pub fn spec(&self) -> &MoGSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    /// Per-component joint log-densities including the mixture weight.
    pub fn component_log_densities(&self, x: ArrayView1<'_, f64>) -> Vec<f64> {
        let d = self.spec.dim;
        (0..self.spec.n_components())
            .map(|k| {
                let diff = DVector::from_fn(d, |i, _| x[i] - self.spec.means[k]);
                let w = self.chol[k].solve_lower_triangular(&diff).expect("non-singular factor");
                self.log_norm[k] - 0.5 * w.norm_squared()
            })
            .collect()
    }

    pub fn log_density(&self, x: ArrayView1<'_, f64>) -> f64 {
        log_sum_exp(&self.component_log_densities(x))
    }

    pub fn log_density_rows(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        x.rows().into_iter().map(|r| self.log_density(r)).collect()
    }

    /// Draw `n` rows and their component labels.
    pub fn sample_with_labels(&self, n: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let d = self.spec.dim;
        let mut rng = rng_for(seed, &[stream::FEATURES]);
        let mut out = Array2::zeros((n, d));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut k = self.spec.n_components() - 1;
            for (c, &w) in self.spec.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    k = c;
                    break;
                }
            }
            let e = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
            let v = &self.chol[k] * e;
            for a in 0..d {
                out[[i, a]] = self.spec.means[k] + v[a];
            }
            labels.push(k);
        }
        (out, labels)
    }
}

/// I.i.d. rows from the mixture.
pub fn gen_mog_features(spec: &MoGSpec, n: usize, seed: u64) -> Result<FeatureMatrix> {
    let dens = MoGDensity::new(spec.clone())?;
    Ok(FeatureMatrix::from_array(dens.sample_with_labels(n, seed).0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = MoGSpec::benchmark(4);
        s.weights = vec![0.5, 0.5, 0.5];
        assert!(s.validate().is_err());
        let mut s = MoGSpec::benchmark(4);
        s.correlations[0] = -0.5;
        assert!(s.validate().is_err());
        assert!(MoGSpec::benchmark(4).validate().is_ok());
    }

    #[test]
    fn single_component_density_is_gaussian() {
        let spec = MoGSpec {
            weights: vec![1.0],
            means: vec![0.0],
            correlations: vec![0.0],
            dim: 2,
        };
        let dens = MoGDensity::new(spec).unwrap();
        let x = ndarray::array![0.5, -1.0];
        let want = -0.5 * (0.25 + 1.0) - 2.0 * LN_SQRT_2PI;
        assert!((dens.log_density(x.view()) - want).abs() < 1e-12);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = MoGSpec::benchmark(3);
        let a = gen_mog_features(&spec, 50, 1).unwrap();
        let b = gen_mog_features(&spec, 50, 1).unwrap();
        assert_eq!(a.values(), b.values());
    }
}
