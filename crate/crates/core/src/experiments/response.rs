//! Sparse linear and trigonometric responses with known relevant features.

use ndarray::{Array1, ArrayView2};
use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{rng_for, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseMode {
    Linear,
    /// `sin(5x)` on odd observations, `cos(5x)` on even ones, counting
    /// observations from 1.
    SineCosine,
}

impl std::str::FromStr for ResponseMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ResponseMode::Linear),
            "sine_cosine" | "sin_cos" => Ok(ResponseMode::SineCosine),
            other => Err(Error::Config(format!("unknown response mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSpec {
    pub beta: Vec<f64>,
    pub noise_std: f64,
    pub mode: ResponseMode,
    pub seed: u64,
}

/// Number of relevant features for dimension `d` when 80% of coefficients are zero.
pub fn n_relevant(d: usize) -> usize {
    d - (d * 4) / 5
}

impl ResponseSpec {
    /// Random sparse coefficients: `⌊0.8·D⌋` zeros, the rest `±U[0.5, 1.5]`
    /// scaled by `1/√(#relevant)`.
    pub fn random(d: usize, noise_std: f64, mode: ResponseMode, seed: u64) -> Self {
        let k = n_relevant(d);
        let mut rng = rng_for(seed, &[stream::RESPONSE]);
        let mut support = sample(&mut rng, d, k).into_vec();
        support.sort_unstable();
        let scale = 1.0 / (k.max(1) as f64).sqrt();
        let mut beta = vec![0.0; d];
        for j in support {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            beta[j] = sign * rng.random_range(0.5..1.5) * scale;
        }
        ResponseSpec {
            beta,
            noise_std,
            mode,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("response noise_std must be positive, got {}", self.noise_std)));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Config("response coefficients must be finite".into()));
        }
        Ok(())
    }

    /// Indices with non-zero coefficients.
    pub fn relevant(&self) -> Vec<usize> {
        self.beta.iter().enumerate().filter(|(_, &b)| b != 0.0).map(|(j, _)| j).collect()
    }
}

/// `Y_i = f_i(X_i)·β + ε_i` with `ε_i ~ N(0, σ²)`.
pub fn gen_response(x: ArrayView2<'_, f64>, spec: &ResponseSpec) -> Result<Array1<f64>> {
    spec.validate()?;
    if x.ncols() != spec.beta.len() {
        return Err(Error::Mismatch(format!(
            "{} coefficients for {} features",
            spec.beta.len(),
            x.ncols()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("features must be finite".into()));
    }
    let mut rng = rng_for(spec.seed, &[stream::NOISE]);
    Ok(x.rows()
        .into_iter()
        .enumerate()
        .map(|(r, row)| {
            let odd = r % 2 == 0;
            let signal: f64 = row
                .iter()
                .zip(&spec.beta)
                .map(|(&v, &b)| {
                    let f = match spec.mode {
                        ResponseMode::Linear => v,
                        ResponseMode::SineCosine if odd => (5.0 * v).sin(),
                        ResponseMode::SineCosine => (5.0 * v).cos(),
                    };
                    f * b
                })
                .sum();
            let e: f64 = StandardNormal.sample(&mut rng);
            signal + spec.noise_std * e
        })
        .collect())
}
