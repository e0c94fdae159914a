//! Predictive models used for the test statistic, and the statistic itself.

pub mod forest;
mod io;
pub mod lasso;
pub mod mlp;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use forest::{fit_random_forest, ForestConfig, ForestModel, StepFunction, Tree};
pub use lasso::{fit_lasso, fit_lasso_cv, kkt_violation, lambda_grid, LassoConfig, LassoModel};
pub use mlp::{fit_mlp, fit_mlp_traced, MlpConfig, MlpEpoch, MlpModel};

/// A fitted regression function.
pub trait Predictor: Sync {
    fn n_features(&self) -> usize;

    fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>>;

    /// Predictions for `x` with column `j` replaced by each column of
    /// `columns` (`N × K`) in turn; returns `N × K`.
    ///
    /// A replacement equal to `x[.., j]` must reproduce `predict` exactly.
    fn predict_swapped(&self, x: ArrayView2<'_, f64>, j: usize, columns: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_swap(self.n_features(), x, j, columns)?;
        let mut work = x.to_owned();
        let mut out = Array2::zeros(columns.dim());
        for (k, col) in columns.axis_iter(Axis(1)).enumerate() {
            work.column_mut(j).assign(&col);
            out.column_mut(k).assign(&self.predict(work.view())?);
        }
        Ok(out)
    }
}

fn check_swap(d: usize, x: ArrayView2<'_, f64>, j: usize, columns: ArrayView2<'_, f64>) -> Result<()> {
    if x.ncols() != d {
        return Err(Error::InvalidInput(format!("model has {d} features, input has {}", x.ncols())));
    }
    if j >= d {
        return Err(Error::InvalidInput(format!("feature index {j} out of range for {d} features")));
    }
    if columns.nrows() != x.nrows() {
        return Err(Error::InvalidInput(format!(
            "{} replacement rows for {} data rows",
            columns.nrows(),
            x.nrows()
        )));
    }
    Ok(())
}

impl Predictor for LassoModel {
    fn n_features(&self) -> usize {
        self.beta.len()
    }

    fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        LassoModel::predict(self, x)
    }

    fn predict_swapped(&self, x: ArrayView2<'_, f64>, j: usize, columns: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_swap(self.beta.len(), x, j, columns)?;
        let base = LassoModel::predict(self, x)?;
        let b = self.beta[j];
        Ok(Array2::from_shape_fn(columns.dim(), |(i, k)| base[i] + b * (columns[[i, k]] - x[[i, j]])))
    }
}

impl Predictor for ForestModel {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        ForestModel::predict(self, x)
    }

    fn predict_swapped(&self, x: ArrayView2<'_, f64>, j: usize, columns: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_swap(self.n_features, x, j, columns)?;
        let base = ForestModel::predict(self, x)?;
        let rows: Vec<Vec<f64>> = (0..x.nrows())
            .into_par_iter()
            .map(|i| {
                let step = self.column_response(x.row(i), j);
                let at_obs = step.eval(x[[i, j]]);
                // offsets from the observed level keep an unchanged value exact
                columns.row(i).iter().map(|&v| base[i] + (step.eval(v) - at_obs)).collect()
            })
            .collect();
        let mut out = Array2::zeros(columns.dim());
        for (i, r) in rows.into_iter().enumerate() {
            out.row_mut(i).assign(&Array1::from(r));
        }
        Ok(out)
    }
}

impl Predictor for MlpModel {
    fn n_features(&self) -> usize {
        MlpModel::n_features(self)
    }

    fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        MlpModel::predict(self, x)
    }
}

/// Which model family computes the statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatisticKind {
    Lasso,
    Forest,
    Mlp,
}

impl std::str::FromStr for StatisticKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lasso" => Ok(StatisticKind::Lasso),
            "forest" => Ok(StatisticKind::Forest),
            "mlp" => Ok(StatisticKind::Mlp),
            other => Err(Error::Config(format!("unknown statistic `{other}` (expected lasso, forest or mlp)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub lasso: LassoConfig,
    pub forest: ForestConfig,
    pub mlp: MlpConfig,
}

/// Any of the three fitted models.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Lasso(LassoModel),
    Forest(ForestModel),
    Mlp(MlpModel),
}

impl Model {
    pub fn kind(&self) -> StatisticKind {
        match self {
            Model::Lasso(_) => StatisticKind::Lasso,
            Model::Forest(_) => StatisticKind::Forest,
            Model::Mlp(_) => StatisticKind::Mlp,
        }
    }

    fn inner(&self) -> &dyn Predictor {
        match self {
            Model::Lasso(m) => m,
            Model::Forest(m) => m,
            Model::Mlp(m) => m,
        }
    }
}

impl Predictor for Model {
    fn n_features(&self) -> usize {
        self.inner().n_features()
    }

    fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        self.inner().predict(x)
    }

    fn predict_swapped(&self, x: ArrayView2<'_, f64>, j: usize, columns: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.inner().predict_swapped(x, j, columns)
    }
}

/// Fit the chosen model family.
pub fn fit_model(kind: StatisticKind, x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, config: &ModelConfig) -> Result<Model> {
    Ok(match kind {
        StatisticKind::Lasso => Model::Lasso(fit_lasso_cv(x, y, None, &config.lasso)?),
        StatisticKind::Forest => Model::Forest(fit_random_forest(x, y, &config.forest)?),
        StatisticKind::Mlp => Model::Mlp(fit_mlp(x, y, &config.mlp)?),
    })
}

/// `−(1/N) Σ (pred_i − y_i)²`, accumulated in row order.
pub fn neg_mse(pred: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
    let mut s = 0.0;
    for (p, t) in pred.iter().zip(y) {
        let r = p - t;
        s += r * r;
    }
    -s / y.len() as f64
}

/// The negative mean squared error of `model` on `(x, y)`.
pub fn neg_mse_statistic(model: &dyn Predictor, x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> Result<f64> {
    if x.nrows() != y.len() || y.is_empty() {
        return Err(Error::InvalidInput(format!("{} rows but {} responses", x.nrows(), y.len())));
    }
    Ok(neg_mse(model.predict(x)?.view(), y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn neg_mse_direct_formula() {
        let y = array![1.0, 1.0, 1.0, 1.0];
        assert_eq!(neg_mse(Array1::zeros(4).view(), y.view()), -1.0);
        assert_eq!(neg_mse(y.view(), y.view()), 0.0);
    }

    #[test]
    fn statistic_names_parse() {
        assert_eq!("Forest".parse::<StatisticKind>().unwrap(), StatisticKind::Forest);
        assert!("svm".parse::<StatisticKind>().is_err());
    }
}
