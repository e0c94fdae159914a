//! Metropolis-Hastings sampling of one feature from its complete conditional
//! under a joint density, with a Gaussian random-walk proposal.
//!
//! Chains for different observations are independent and each owns a
//! generator keyed on `(seed, observation, feature)`. Blocks of chains are
//! advanced in lockstep so the density is evaluated once per step for the
//! whole block; the result is identical to running every chain alone.

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::density::JointDensity;
use super::proposal::ConditionalGaussian;
use crate::error::{Error, Result};
use crate::seed::{rng_for, stream, Rng};

const BLOCK_ROWS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainInit {
    ObservedValue,
    ConditionalMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    /// Retained samples per chain.
    pub k: usize,
    pub burn_in: usize,
    pub thinning: usize,
    /// Multiplies the conditional standard deviation of the Gaussian fit.
    pub proposal_scale_multiplier: f64,
    pub seed: u64,
    pub init: ChainInit,
    /// Replaces the feature index in the per-chain random streams, so that
    /// streams can follow a feature's identity rather than its column.
    #[serde(skip)]
    pub stream_key: Option<u64>,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            k: 1000,
            burn_in: 100,
            thinning: 1,
            proposal_scale_multiplier: 1.0,
            seed: 0,
            init: ChainInit::ObservedValue,
            stream_key: None,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("mcmc.k must be at least 1".into()));
        }
        if self.thinning == 0 {
            return Err(Error::Config("mcmc.thinning must be at least 1".into()));
        }
        if !(self.proposal_scale_multiplier > 0.0 && self.proposal_scale_multiplier.is_finite()) {
            return Err(Error::Config("mcmc.proposal_scale_multiplier must be positive".into()));
        }
        Ok(())
    }

    fn total_steps(&self) -> usize {
        self.burn_in + self.k * self.thinning
    }

    pub(crate) fn chain_rng(&self, observation: usize, j: usize) -> Rng {
        let key = self.stream_key.unwrap_or(j as u64);
        rng_for(self.seed, &[stream::CHAIN, observation as u64, key])
    }
}

/// Samples and acceptance rate of a single chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub samples: Vec<f64>,
    pub acceptance_rate: f64,
}

/// Null draws of feature `j` for a set of observations.
#[derive(Debug, Clone, PartialEq)]
pub struct NullSamples {
    pub feature: usize,
    /// `N × K` matrix of draws.
    pub samples: Array2<f64>,
    /// Fraction of accepted proposals per observation, over all steps.
    pub acceptance_rate: Vec<f64>,
}

impl NullSamples {
    pub fn n_rows(&self) -> usize {
        self.samples.nrows()
    }

    pub fn k(&self) -> usize {
        self.samples.ncols()
    }

    pub fn mean_acceptance(&self) -> f64 {
        self.acceptance_rate.iter().sum::<f64>() / self.acceptance_rate.len().max(1) as f64
    }

    /// The first `k` draws of every chain.
    pub fn truncated(&self, k: usize) -> NullSamples {
        NullSamples {
            feature: self.feature,
            samples: self.samples.slice(ndarray::s![.., ..k.min(self.k())]).to_owned(),
            acceptance_rate: self.acceptance_rate.clone(),
        }
    }
}

/// Log acceptance probability `min(0, log p(x*) − log p(x))`.
pub fn log_acceptance(lp_proposal: f64, lp_current: f64) -> f64 {
    let r = lp_proposal - lp_current;
    if r.is_nan() {
        // −∞ − (−∞) or a NaN proposal: never accept
        f64::NEG_INFINITY
    } else {
        r.min(0.0)
    }
}

/// Advance the chains of one block of rows in lockstep.
fn run_block(
    rows: ArrayView2<'_, f64>,
    ids: &[usize],
    j: usize,
    density: &dyn JointDensity,
    proposal: &ConditionalGaussian,
    config: &ChainConfig,
) -> Result<(Array2<f64>, Vec<f64>)> {
    let n = rows.nrows();
    let step = config.proposal_scale_multiplier * proposal.std(j);
    let mut rngs: Vec<Rng> = ids.iter().map(|&i| config.chain_rng(i, j)).collect();
    let mut current: Vec<f64> = match config.init {
        ChainInit::ObservedValue => rows.column(j).to_vec(),
        ChainInit::ConditionalMean => rows
            .rows()
            .into_iter()
            .map(|r| proposal.conditional_mean(&r.to_vec(), j))
            .collect(),
    };
    let mut eval = density.column_evaluator(rows, j);
    let mut current_lp = vec![0.0; n];
    eval.eval(&current, &mut current_lp);
    if let Some(i) = current_lp.iter().position(|v| !v.is_finite()) {
        return Err(Error::ChainInit {
            observation: ids[i],
            feature: j,
            message: format!("log-density at the initial value {} is not finite", current[i]),
        });
    }

    let mut samples = Array2::zeros((n, config.k));
    let mut accepted = vec![0usize; n];
    let mut cand = vec![0.0; n];
    let mut cand_lp = vec![0.0; n];
    let mut kept = 0usize;
    for t in 1..=config.total_steps() {
        for i in 0..n {
            let e: f64 = StandardNormal.sample(&mut rngs[i]);
            cand[i] = current[i] + step * e;
        }
        eval.eval(&cand, &mut cand_lp);
        for i in 0..n {
            let u: f64 = rngs[i].random();
            if u.ln() < log_acceptance(cand_lp[i], current_lp[i]) {
                current[i] = cand[i];
                current_lp[i] = cand_lp[i];
                accepted[i] += 1;
            }
        }
        if t > config.burn_in && (t - config.burn_in) % config.thinning == 0 {
            for i in 0..n {
                samples[[i, kept]] = current[i];
            }
            kept += 1;
        }
    }
    let total = config.total_steps().max(1) as f64;
    Ok((samples, accepted.iter().map(|&a| a as f64 / total).collect()))
}

/// Run one chain for observation `observation` (which keys its generator).
pub fn mh_chain(
    x_row: &[f64],
    observation: usize,
    j: usize,
    density: &dyn JointDensity,
    proposal: &ConditionalGaussian,
    config: &ChainConfig,
) -> Result<ChainOutput> {
    config.validate()?;
    check_dims(x_row.len(), j, density, proposal)?;
    let rows = ArrayView2::from_shape((1, x_row.len()), x_row).map_err(|e| Error::InvalidInput(e.to_string()))?;
    if x_row.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("observation {observation} has non-finite features")));
    }
    let (s, rate) = run_block(rows, &[observation], j, density, proposal, config)?;
    Ok(ChainOutput {
        samples: s.row(0).to_vec(),
        acceptance_rate: rate[0],
    })
}

fn check_dims(d: usize, j: usize, density: &dyn JointDensity, proposal: &ConditionalGaussian) -> Result<()> {
    if density.dim() != d || proposal.dim() != d {
        return Err(Error::Mismatch(format!(
            "data has {d} features, density {} and proposal {}",
            density.dim(),
            proposal.dim()
        )));
    }
    if j >= d {
        return Err(Error::InvalidInput(format!("feature index {j} out of range for {d} features")));
    }
    Ok(())
}

/// Null draws of feature `j` for every row of `x`. `row_ids[i]` is the
/// identity of row `i` used to key its chain; pass the original dataset
/// indices so that results do not depend on row order.
pub fn sample_null_features(
    x: ArrayView2<'_, f64>,
    row_ids: &[usize],
    j: usize,
    density: &dyn JointDensity,
    proposal: &ConditionalGaussian,
    config: &ChainConfig,
) -> Result<NullSamples> {
    config.validate()?;
    check_dims(x.ncols(), j, density, proposal)?;
    if row_ids.len() != x.nrows() {
        return Err(Error::InvalidInput(format!("{} row ids for {} rows", row_ids.len(), x.nrows())));
    }
    if let Some(((i, c), _)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite feature at row {i}, column {c}")));
    }
    let n = x.nrows();
    let starts: Vec<usize> = (0..n).step_by(BLOCK_ROWS).collect();
    let blocks = starts
        .par_iter()
        .map(|&s| {
            let e = (s + BLOCK_ROWS).min(n);
            run_block(x.slice(ndarray::s![s..e, ..]), &row_ids[s..e], j, density, proposal, config)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut samples = Array2::zeros((n, config.k));
    let mut rates = Vec::with_capacity(n);
    for (&s, (blk, r)) in starts.iter().zip(blocks) {
        samples.slice_mut(ndarray::s![s..s + blk.nrows(), ..]).assign(&blk);
        rates.extend(r);
    }
    Ok(NullSamples {
        feature: j,
        samples,
        acceptance_rate: rates,
    })
}
