//! Empirical p-values from a statistic and its null draws.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Rng;

/// `(1 + #{k : T* < T_k}) / (K + 1)`. Higher statistics are better fits, so
/// a null draw beating the observed value is evidence against relevance.
pub fn empirical_pvalue(t_star: f64, t_null: &[f64]) -> Result<f64> {
    if t_null.is_empty() {
        return Err(Error::InvalidInput("at least one null statistic is required".into()));
    }
    let exceed = t_null.iter().filter(|&&t| t_star < t).count();
    Ok((1 + exceed) as f64 / (t_null.len() + 1) as f64)
}

/// How null statistics equal to the observed one are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    /// Ties never count, as in [`empirical_pvalue`].
    Strict,
    /// Every tie counts as an exceedance.
    Conservative,
    /// The observed statistic takes a uniformly random rank among its ties.
    #[default]
    Randomized,
}

impl std::str::FromStr for TieRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(TieRule::Strict),
            "conservative" => Ok(TieRule::Conservative),
            "randomized" => Ok(TieRule::Randomized),
            other => Err(Error::Config(format!("unknown tie rule `{other}`"))),
        }
    }
}

/// Exceedance and tie counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NullCounts {
    pub k: usize,
    pub greater: usize,
    pub ties: usize,
}

impl NullCounts {
    pub fn new(t_star: f64, t_null: &[f64]) -> Self {
        NullCounts {
            k: t_null.len(),
            greater: t_null.iter().filter(|&&t| t_star < t).count(),
            ties: t_null.iter().filter(|&&t| t_star == t).count(),
        }
    }

    /// A p-value on the grid `m / (K + 1)`; `rng` is only drawn from for
    /// randomized ties.
    pub fn pvalue(&self, rule: TieRule, rng: &mut Rng) -> f64 {
        let counted = match rule {
            TieRule::Strict => 0,
            TieRule::Conservative => self.ties,
            TieRule::Randomized if self.ties == 0 => 0,
            TieRule::Randomized => rng.random_range(0..=self.ties),
        };
        (1 + self.greater + counted) as f64 / (self.k + 1) as f64
    }
}
