//! Observed and swap-in statistics on held-out data.

use ndarray::{s, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::models::{neg_mse, neg_mse_statistic, Predictor};
use crate::sampler::NullSamples;

/// Upper bound on swapped predictions held at once; a forest rebuilds its
/// per-row step functions for every chunk, so chunks should be large.
const SWAP_ENTRIES: usize = 1 << 24;

/// `T*`: the statistic on untouched test data.
pub fn observed_statistic(model: &dyn Predictor, x_test: ArrayView2<'_, f64>, y_test: ArrayView1<'_, f64>) -> Result<f64> {
    neg_mse_statistic(model, x_test, y_test)
}

/// `T_{j,k}` for every draw `k`: the statistic with column `j` replaced by
/// the `k`-th null column. The model is not refitted.
pub fn null_statistics(
    model: &dyn Predictor,
    x_test: ArrayView2<'_, f64>,
    y_test: ArrayView1<'_, f64>,
    j: usize,
    nulls: &NullSamples,
) -> Result<Vec<f64>> {
    if nulls.feature != j {
        return Err(Error::InvalidInput(format!("null draws are for feature {}, not {j}", nulls.feature)));
    }
    if nulls.n_rows() != x_test.nrows() || y_test.len() != x_test.nrows() {
        return Err(Error::InvalidInput(format!(
            "{} null rows, {} data rows, {} responses",
            nulls.n_rows(),
            x_test.nrows(),
            y_test.len()
        )));
    }
    let k = nulls.k();
    let chunk = (SWAP_ENTRIES / x_test.nrows().max(1)).max(1);
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    while start < k {
        let end = (start + chunk).min(k);
        let preds = model.predict_swapped(x_test, j, nulls.samples.slice(s![.., start..end]))?;
        out.extend(preds.columns().into_iter().map(|p| neg_mse(p, y_test)));
        start = end;
    }
    Ok(out)
}
