//! Seeded train/test partition of the rows.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{rng_for, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Ascending row indices.
    pub train: Vec<usize>,
    /// Ascending row indices.
    pub test: Vec<usize>,
    pub seed: u64,
}

impl SplitSpec {
    /// Shuffle `0..n` and put the first `round(n·train_fraction)` rows in the
    /// training set.
    pub fn random(n: usize, train_fraction: f64, seed: u64) -> Result<Self> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::Config(format!("split.train_fraction must be in (0, 1), got {train_fraction}")));
        }
        let n_train = (n as f64 * train_fraction).round() as usize;
        if n_train == 0 || n_train == n {
            return Err(Error::InvalidInput(format!("{n} rows cannot be split with fraction {train_fraction}")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_for(seed, &[stream::SPLIT]));
        let mut train = order[..n_train].to_vec();
        let mut test = order[n_train..].to_vec();
        train.sort_unstable();
        test.sort_unstable();
        Ok(SplitSpec { train, test, seed })
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.test) {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidInput(format!("split row {i} is out of range or repeated")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halves_are_disjoint_and_cover() {
        let s = SplitSpec::random(101, 0.5, 3).unwrap();
        assert_eq!(s.train.len() + s.test.len(), 101);
        s.validate(101).unwrap();
        assert_eq!(s, SplitSpec::random(101, 0.5, 3).unwrap());
        assert!(SplitSpec::random(1, 0.5, 3).is_err());
    }
}
