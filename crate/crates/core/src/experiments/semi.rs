//! Preparation of real feature tables for semi-synthetic runs.

use ndarray::{Array1, Array2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::seed::{rng_for, stream};

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub features: FeatureMatrix,
    pub min: Array1<f64>,
    pub range: Array1<f64>,
}

/// Min-max scale every column to `[0, 1]`, then add `N(0, noise_std²)`.
pub fn normalize_unit_interval(x: &FeatureMatrix, noise_std: f64, seed: u64) -> Result<Normalized> {
    if !(noise_std >= 0.0) {
        return Err(Error::Config(format!("noise_std must be non-negative, got {noise_std}")));
    }
    x.check_finite()?;
    let v = x.values();
    let d = v.ncols();
    let mut min = Array1::zeros(d);
    let mut range = Array1::zeros(d);
    for j in 0..d {
        let (lo, hi) = v.column(j).iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &t| (a.min(t), b.max(t)));
        if !(hi > lo) {
            return Err(Error::InvalidInput(format!("column `{}` is constant", x.names()[j])));
        }
        min[j] = lo;
        range[j] = hi - lo;
    }
    let mut out: Array2<f64> = (&v - &min) / &range;
    if noise_std > 0.0 {
        let mut rng = rng_for(seed, &[stream::NOISE, 0x5E]);
        out.mapv_inplace(|t| t + noise_std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng));
    }
    Ok(Normalized {
        features: FeatureMatrix::new(out, x.names().to_vec())?,
        min,
        range,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationRank {
    /// Largest absolute correlation with any other column.
    #[default]
    Max,
    /// Mean absolute correlation with the other columns.
    Mean,
}

/// Pearson correlation matrix; constant columns correlate 0 with everything else.
pub fn correlation_matrix(x: &FeatureMatrix) -> Array2<f64> {
    let v = x.values();
    let n = v.nrows() as f64;
    let mean = v.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(v.ncols()));
    let c = &v - &mean;
    let cov = c.t().dot(&c) / n;
    let sd = cov.diag().mapv(f64::sqrt);
    let d = v.ncols();
    Array2::from_shape_fn((d, d), |(a, b)| {
        if a == b {
            1.0
        } else if sd[a] > 0.0 && sd[b] > 0.0 {
            cov[[a, b]] / (sd[a] * sd[b])
        } else {
            0.0
        }
    })
}

/// The `m` most correlated columns, returned in ascending index order.
/// Equal scores rank the lower index first.
pub fn select_top_correlated(x: &FeatureMatrix, m: usize, rank: CorrelationRank) -> Result<Vec<usize>> {
    let d = x.n_cols();
    if m > d {
        return Err(Error::InvalidInput(format!("cannot pick {m} of {d} columns")));
    }
    let r = correlation_matrix(x);
    let score: Vec<f64> = (0..d)
        .map(|a| {
            let others = (0..d).filter(|&b| b != a).map(|b| r[[a, b]].abs());
            match rank {
                CorrelationRank::Max => others.fold(0.0, f64::max),
                CorrelationRank::Mean => others.sum::<f64>() / (d.max(2) - 1) as f64,
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
    let mut top = order[..m].to_vec();
    top.sort_unstable();
    Ok(top)
}
