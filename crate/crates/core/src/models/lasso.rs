//! L1-penalized least squares by covariance-form coordinate descent, with the
//! penalty chosen by K-fold cross-validation.
//!
//! Objective: `(1/N)‖Y − b − Xβ‖² + λ‖β‖₁`, intercept unpenalized.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{rng_for, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LassoConfig {
    pub n_lambdas: usize,
    /// Smallest grid value as a fraction of `λ_max`.
    pub lambda_min_ratio: f64,
    pub folds: usize,
    pub tolerance: f64,
    pub max_sweeps: usize,
    pub seed: u64,
}

impl Default for LassoConfig {
    fn default() -> Self {
        LassoConfig {
            n_lambdas: 100,
            lambda_min_ratio: 1e-4,
            folds: 5,
            tolerance: 1e-7,
            max_sweeps: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoModel {
    pub beta: Array1<f64>,
    pub intercept: f64,
    pub lambda_selected: f64,
    /// `(λ, mean held-out MSE)` for every grid point, largest λ first.
    pub cv_curve: Vec<(f64, f64)>,
    /// False when some solve hit the sweep cap.
    pub converged: bool,
}

impl LassoModel {
    pub fn n_features(&self) -> usize {
        self.beta.len()
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        if x.ncols() != self.beta.len() {
            return Err(Error::InvalidInput(format!(
                "lasso model has {} features, input has {}",
                self.beta.len(),
                x.ncols()
            )));
        }
        Ok(x.dot(&self.beta) + self.intercept)
    }
}

/// Centered second moments of one training set.
struct Moments {
    x_mean: Array1<f64>,
    y_mean: f64,
    gram: Array2<f64>,
    xty: Array1<f64>,
}

impl Moments {
    fn new(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> Self {
        let n = x.nrows() as f64;
        let x_mean = x.mean_axis(Axis(0)).expect("non-empty");
        let y_mean = y.mean().expect("non-empty");
        let xc = &x - &x_mean;
        let yc = &y - y_mean;
        Moments {
            gram: xc.t().dot(&xc) / n,
            xty: xc.t().dot(&yc) / n,
            x_mean,
            y_mean,
        }
    }

    fn lambda_max(&self) -> f64 {
        self.xty.iter().fold(0.0f64, |m, v| m.max(2.0 * v.abs()))
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Coordinate descent from `beta`; returns whether it converged.
fn coordinate_descent(m: &Moments, lambda: f64, beta: &mut Array1<f64>, tol: f64, max_sweeps: usize) -> bool {
    let d = beta.len();
    // gradient cache: g = Gβ
    let mut g = m.gram.dot(&*beta);
    for _ in 0..max_sweeps {
        let mut max_change = 0.0f64;
        for j in 0..d {
            let gjj = m.gram[[j, j]];
            if gjj <= 0.0 {
                beta[j] = 0.0;
                continue;
            }
            let old = beta[j];
            let rho = m.xty[j] - (g[j] - gjj * old);
            let new = soft_threshold(rho, 0.5 * lambda) / gjj;
            if new != old {
                let delta = new - old;
                beta[j] = new;
                for k in 0..d {
                    g[k] += m.gram[[k, j]] * delta;
                }
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change < tol {
            return true;
        }
    }
    false
}

fn check_xy(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::InvalidInput(format!("{} feature rows but {} responses", x.nrows(), y.len())));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite training data".into()));
    }
    Ok(())
}

/// Solve at a single penalty.
pub fn fit_lasso(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, lambda: f64, config: &LassoConfig) -> Result<LassoModel> {
    check_xy(x, y)?;
    if x.nrows() == 0 {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::Config(format!("lasso penalty must be positive, got {lambda}")));
    }
    let m = Moments::new(x, y);
    let mut beta = Array1::zeros(x.ncols());
    let converged = coordinate_descent(&m, lambda, &mut beta, config.tolerance, config.max_sweeps);
    let intercept = m.y_mean - m.x_mean.dot(&beta);
    Ok(LassoModel {
        beta,
        intercept,
        lambda_selected: lambda,
        cv_curve: Vec::new(),
        converged,
    })
}

/// `n` log-spaced values from `λ_max` down to `ratio·λ_max`.
pub fn lambda_grid(lambda_max: f64, n: usize, ratio: f64) -> Vec<f64> {
    if n == 1 {
        return vec![lambda_max];
    }
    let lo = (lambda_max * ratio).ln();
    let hi = lambda_max.ln();
    (0..n).map(|i| (hi + (lo - hi) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Cross-validated fit. Uses `grid` when given (any order), otherwise the
/// default log-spaced grid from the data's `λ_max`.
pub fn fit_lasso_cv(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, grid: Option<&[f64]>, config: &LassoConfig) -> Result<LassoModel> {
    check_xy(x, y)?;
    let n = x.nrows();
    if config.folds < 2 || n < config.folds {
        return Err(Error::InvalidInput(format!("{n} rows cannot be split into {} folds", config.folds)));
    }
    let full = Moments::new(x, y);
    let mut lambdas: Vec<f64> = match grid {
        Some(g) => {
            if g.is_empty() || g.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
                return Err(Error::Config("lasso grid must be non-empty and positive".into()));
            }
            g.to_vec()
        }
        None => {
            let lmax = full.lambda_max();
            let lmax = if lmax > 0.0 { lmax } else { 1.0 };
            lambda_grid(lmax, config.n_lambdas.max(1), config.lambda_min_ratio)
        }
    };
    lambdas.sort_by(|a, b| b.total_cmp(a));

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(config.seed, &[stream::LASSO_FOLDS]));
    let mut fold_of = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % config.folds;
    }
    let mut converged = true;
    let mut err_sum = vec![0.0; lambdas.len()];
    for f in 0..config.folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
        let xt = x.select(Axis(0), &train);
        let yt = y.select(Axis(0), &train);
        let xv = x.select(Axis(0), &test);
        let yv = y.select(Axis(0), &test);
        let m = Moments::new(xt.view(), yt.view());
        let mut beta = Array1::zeros(x.ncols());
        for (l, &lam) in lambdas.iter().enumerate() {
            converged &= coordinate_descent(&m, lam, &mut beta, config.tolerance, config.max_sweeps);
            let b0 = m.y_mean - m.x_mean.dot(&beta);
            let pred = xv.dot(&beta) + b0;
            let mse = (&pred - &yv).mapv(|r| r * r).mean().expect("non-empty fold");
            err_sum[l] += mse;
        }
    }
    let cv_curve: Vec<(f64, f64)> = lambdas
        .iter()
        .zip(&err_sum)
        .map(|(&l, &e)| (l, e / config.folds as f64))
        .collect();
    // first minimum wins, which favours the larger penalty on ties
    let best = cv_curve
        .iter()
        .enumerate()
        .fold(0, |b, (i, c)| if c.1 < cv_curve[b].1 { i } else { b });

    let mut beta = Array1::zeros(x.ncols());
    for &lam in &lambdas[..=best] {
        converged &= coordinate_descent(&full, lam, &mut beta, config.tolerance, config.max_sweeps);
    }
    if !converged {
        log::warn!("lasso coordinate descent reached the sweep cap before converging");
    }
    let intercept = full.y_mean - full.x_mean.dot(&beta);
    Ok(LassoModel {
        beta,
        intercept,
        lambda_selected: lambdas[best],
        cv_curve,
        converged,
    })
}

/// `max_j` violation of the optimality conditions at `model.lambda_selected`,
/// relative to the penalty.
pub fn kkt_violation(model: &LassoModel, x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
    let n = x.nrows() as f64;
    let r = &y - &(x.dot(&model.beta) + model.intercept);
    let grad = x.t().dot(&r) * (2.0 / n);
    let lam = model.lambda_selected;
    let mut worst = 0.0f64;
    for (j, &g) in grad.iter().enumerate() {
        let b = model.beta[j];
        let v = if b == 0.0 {
            (g.abs() - lam).max(0.0)
        } else {
            (g - lam * b.signum()).abs()
        };
        worst = worst.max(v / lam);
    }
    worst
}
