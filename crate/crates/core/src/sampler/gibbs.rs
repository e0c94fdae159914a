//! Exact conditional sampling of a finite-support feature by enumeration.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;

use crate::error::{Error, Result};
use crate::numeric::log_sum_exp;
use crate::seed::{rng_for, stream};

/// Normalized conditional probabilities of `x_j` over `support`, given the
/// rest of `x_row`.
pub fn enumerate_conditional(
    x_row: &[f64],
    j: usize,
    log_density: &dyn Fn(&[f64]) -> f64,
    support: &[f64],
) -> Result<Vec<f64>> {
    if support.is_empty() {
        return Err(Error::InvalidInput("support must not be empty".into()));
    }
    if j >= x_row.len() {
        return Err(Error::InvalidInput(format!("feature index {j} out of range for {} features", x_row.len())));
    }
    let mut row = x_row.to_vec();
    let lps: Vec<f64> = support
        .iter()
        .map(|&c| {
            row[j] = c;
            let v = log_density(&row);
            if v.is_nan() {
                f64::NEG_INFINITY
            } else {
                v
            }
        })
        .collect();
    let norm = log_sum_exp(&lps);
    if !norm.is_finite() {
        return Err(Error::DegenerateConditional);
    }
    Ok(lps.iter().map(|&v| (v - norm).exp()).collect())
}

/// `k` independent draws of `x_j` from its enumerated conditional.
pub fn gibbs_discrete(
    x_row: &[f64],
    j: usize,
    log_density: &dyn Fn(&[f64]) -> f64,
    support: &[f64],
    k: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let probs = enumerate_conditional(x_row, j, log_density, support)?;
    let dist = WeightedIndex::new(&probs).map_err(|_| Error::DegenerateConditional)?;
    let mut rng = rng_for(seed, &[stream::GIBBS, j as u64]);
    Ok((0..k).map(|_| support[dist.sample(&mut rng)]).collect())
}
