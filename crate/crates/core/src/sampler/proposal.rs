//! Random-walk step sizes from the conditional variance of a Gaussian fit.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView2};

use crate::data::covariance;
use crate::error::{Error, Result};

const RIDGE: f64 = 1e-6;

fn check_covariance(cov: ArrayView2<'_, f64>) -> Result<()> {
    let d = cov.nrows();
    if d == 0 || cov.ncols() != d {
        return Err(Error::InvalidInput(format!("covariance must be square, got {:?}", cov.dim())));
    }
    let scale = cov.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for a in 0..d {
        if !(cov[[a, a]] > 0.0) || !cov[[a, a]].is_finite() {
            return Err(Error::InvalidInput(format!("covariance diagonal entry {a} is not positive")));
        }
        for b in (a + 1)..d {
            if (cov[[a, b]] - cov[[b, a]]).abs() > 1e-10 * scale || !cov[[a, b]].is_finite() {
                return Err(Error::InvalidInput(format!("covariance is not symmetric at ({a}, {b})")));
            }
        }
    }
    Ok(())
}

fn ridge(cov: ArrayView2<'_, f64>) -> f64 {
    RIDGE * cov.diag().sum() / cov.nrows() as f64
}

/// Coefficients of `x_j` regressed on `x_−j` and the residual variance,
/// using the ridge-regularized block `Σ_−j,−j + λI`.
fn schur(cov: ArrayView2<'_, f64>, j: usize, lambda: f64) -> Result<(Vec<f64>, f64)> {
    let d = cov.nrows();
    if j >= d {
        return Err(Error::InvalidInput(format!("feature index {j} out of range for dimension {d}")));
    }
    if d == 1 {
        return Ok((Vec::new(), cov[[0, 0]]));
    }
    let others: Vec<usize> = (0..d).filter(|&k| k != j).collect();
    let a = DMatrix::from_fn(d - 1, d - 1, |r, c| {
        cov[[others[r], others[c]]] + if r == c { lambda } else { 0.0 }
    });
    let b = DVector::from_fn(d - 1, |r, _| cov[[others[r], j]]);
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::numeric("conditional variance", format!("covariance block without feature {j} is not positive definite")))?;
    let coef = chol.solve(&b);
    let var = cov[[j, j]] - b.dot(&coef);
    // never let round-off produce a zero step size
    let var = var.max(1e-12 * cov[[j, j]]);
    Ok((coef.iter().copied().collect(), var))
}

/// `sqrt(Σ_jj − Σ_j,−j (Σ_−j,−j + λI)⁻¹ Σ_−j,j)` with `λ = 1e-6·trace(Σ)/D`.
pub fn conditional_proposal_std(cov: ArrayView2<'_, f64>, j: usize) -> Result<f64> {
    check_covariance(cov)?;
    Ok(schur(cov, j, ridge(cov))?.1.sqrt())
}

/// Gaussian approximation of the feature distribution, estimated once from
/// training rows. Supplies proposal scales and conditional-mean starts.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalGaussian {
    mean: Array1<f64>,
    coef: Vec<Vec<f64>>,
    stds: Vec<f64>,
}

impl ConditionalGaussian {
    pub fn fit(x: ArrayView2<'_, f64>) -> Result<Self> {
        if x.nrows() < 2 {
            return Err(Error::InvalidInput("at least two rows are needed to estimate a covariance".into()));
        }
        let mean = x.mean_axis(ndarray::Axis(0)).expect("non-empty");
        Self::from_moments(mean, covariance(x))
    }

    pub fn from_moments(mean: Array1<f64>, cov: Array2<f64>) -> Result<Self> {
        check_covariance(cov.view())?;
        if mean.len() != cov.nrows() {
            return Err(Error::InvalidInput("mean and covariance disagree on dimension".into()));
        }
        let lambda = ridge(cov.view());
        let mut coef = Vec::with_capacity(mean.len());
        let mut stds = Vec::with_capacity(mean.len());
        for j in 0..mean.len() {
            let (c, v) = schur(cov.view(), j, lambda)?;
            coef.push(c);
            stds.push(v.sqrt());
        }
        Ok(ConditionalGaussian { mean, coef, stds })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std(&self, j: usize) -> f64 {
        self.stds[j]
    }

    pub fn stds(&self) -> &[f64] {
        &self.stds
    }

    /// `E[x_j | x_−j]` under the Gaussian fit; `row[j]` is ignored.
    pub fn conditional_mean(&self, row: &[f64], j: usize) -> f64 {
        let mut m = self.mean[j];
        let mut c = self.coef[j].iter();
        for (k, &v) in row.iter().enumerate() {
            if k != j {
                m += c.next().expect("dimension checked") * (v - self.mean[k]);
            }
        }
        m
    }
}
