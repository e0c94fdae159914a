//! Exact complete conditionals of a Gaussian mixture, used as a reference
//! sampler and as a bypass of the learned density.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::mh::{ChainConfig, NullSamples};
use crate::error::{Error, Result};
use crate::experiments::mog::MoGSpec;
use crate::numeric::{log_sum_exp, normal_cdf, LN_SQRT_2PI};
use crate::seed::Rng;

/// A one-dimensional Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MoGConditional {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl MoGConditional {
    pub fn ln_pdf(&self, x: f64) -> f64 {
        let terms: Vec<f64> = (0..self.weights.len())
            .map(|k| {
                let t = (x - self.means[k]) / self.stds[k];
                self.weights[k].ln() - 0.5 * t * t - self.stds[k].ln() - LN_SQRT_2PI
            })
            .collect();
        log_sum_exp(&terms)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        (0..self.weights.len())
            .map(|k| self.weights[k] * normal_cdf((x - self.means[k]) / self.stds[k]))
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.weights.iter().zip(&self.means).map(|(w, m)| w * m).sum()
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.weights.len() - 1;
        for (c, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = c;
                break;
            }
        }
        let e: f64 = StandardNormal.sample(rng);
        self.means[k] + self.stds[k] * e
    }
}

struct ComponentConditional {
    chol: DMatrix<f64>,
    log_norm: f64,
    coef: DVector<f64>,
    std: f64,
}

/// Conditioning of every mixture component on all coordinates except `j`.
pub struct MoGConditioner {
    spec: MoGSpec,
    j: usize,
    parts: Vec<ComponentConditional>,
}

impl MoGConditioner {
    pub fn new(spec: &MoGSpec, j: usize) -> Result<Self> {
        spec.validate()?;
        let d = spec.dim;
        if j >= d {
            return Err(Error::InvalidInput(format!("feature index {j} out of range for {d} features")));
        }
        let others: Vec<usize> = (0..d).filter(|&k| k != j).collect();
        let mut parts = Vec::new();
        for k in 0..spec.n_components() {
            let cov = spec.covariance(k);
            let block = DMatrix::from_fn(d - 1, d - 1, |a, b| cov[[others[a], others[b]]]);
            let cross = DVector::from_fn(d - 1, |a, _| cov[[others[a], j]]);
            let (chol, coef, var) = if d == 1 {
                (DMatrix::zeros(0, 0), DVector::zeros(0), cov[[j, j]])
            } else {
                let c = block
                    .cholesky()
                    .ok_or_else(|| Error::numeric("mixture conditional", format!("component {k} block is singular")))?;
                let coef = c.solve(&cross);
                let var = cov[[j, j]] - cross.dot(&coef);
                (c.l(), coef, var)
            };
            if !(var > 0.0) {
                return Err(Error::numeric("mixture conditional", format!("component {k} conditional variance {var}")));
            }
            let half_logdet: f64 = (0..d - 1).map(|i| chol[(i, i)].ln()).sum();
            parts.push(ComponentConditional {
                log_norm: spec.weights[k].ln() - half_logdet - (d - 1) as f64 * LN_SQRT_2PI,
                chol,
                coef,
                std: var.sqrt(),
            });
        }
        Ok(MoGConditioner {
            spec: spec.clone(),
            j,
            parts,
        })
    }

    /// The conditional of `x_j` given `x_minus_j` (length `D − 1`).
    pub fn conditional(&self, x_minus_j: &[f64]) -> Result<MoGConditional> {
        let d = self.spec.dim;
        if x_minus_j.len() + 1 != d {
            return Err(Error::InvalidInput(format!("expected {} conditioning values, got {}", d - 1, x_minus_j.len())));
        }
        if x_minus_j.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("conditioning values must be finite".into()));
        }
        let mut logw = Vec::with_capacity(self.parts.len());
        let mut means = Vec::with_capacity(self.parts.len());
        let mut stds = Vec::with_capacity(self.parts.len());
        for (k, p) in self.parts.iter().enumerate() {
            let mu = self.spec.means[k];
            let diff = DVector::from_fn(d - 1, |a, _| x_minus_j[a] - mu);
            let quad = if d == 1 {
                0.0
            } else {
                p.chol.solve_lower_triangular(&diff).expect("non-singular factor").norm_squared()
            };
            logw.push(p.log_norm - 0.5 * quad);
            means.push(mu + p.coef.dot(&diff));
            stds.push(p.std);
        }
        let norm = log_sum_exp(&logw);
        if !norm.is_finite() {
            return Err(Error::numeric("mixture conditional", "conditioning point has zero density under every component"));
        }
        Ok(MoGConditional {
            weights: logw.iter().map(|&l| (l - norm).exp()).collect(),
            means,
            stds,
        })
    }

    /// Conditional for a full row, ignoring `row[j]`.
    pub fn conditional_for_row(&self, row: &[f64]) -> Result<MoGConditional> {
        let rest: Vec<f64> = row.iter().enumerate().filter(|&(k, _)| k != self.j).map(|(_, &v)| v).collect();
        self.conditional(&rest)
    }
}

/// Exact one-dimensional conditional of coordinate `j` given the others.
pub fn exact_mog_conditional(spec: &MoGSpec, x_minus_j: &[f64], j: usize) -> Result<MoGConditional> {
    MoGConditioner::new(spec, j)?.conditional(x_minus_j)
}

/// `config.k` i.i.d. draws from the exact conditional for every row; a
/// stand-in for the learned sampler when the generating mixture is known.
/// Burn-in and proposal settings are ignored.
pub fn sample_exact_nulls(
    x: ArrayView2<'_, f64>,
    row_ids: &[usize],
    j: usize,
    spec: &MoGSpec,
    config: &ChainConfig,
) -> Result<NullSamples> {
    config.validate()?;
    let k = config.k;
    if x.ncols() != spec.dim {
        return Err(Error::Mismatch(format!("data has {} features, mixture {}", x.ncols(), spec.dim)));
    }
    if row_ids.len() != x.nrows() {
        return Err(Error::InvalidInput(format!("{} row ids for {} rows", row_ids.len(), x.nrows())));
    }
    let cond = MoGConditioner::new(spec, j)?;
    let mut samples = Array2::zeros((x.nrows(), k));
    for (i, row) in x.rows().into_iter().enumerate() {
        let c = cond.conditional_for_row(&row.to_vec())?;
        let mut rng = config.chain_rng(row_ids[i], j);
        for s in 0..k {
            samples[[i, s]] = c.sample(&mut rng);
        }
    }
    Ok(NullSamples {
        feature: j,
        samples,
        acceptance_rate: vec![1.0; x.nrows()],
    })
}
