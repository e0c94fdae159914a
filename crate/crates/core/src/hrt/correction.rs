//! Step-up multiple-testing thresholds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correction {
    /// Benjamini–Hochberg.
    #[default]
    Bh,
    /// Benjamini–Yekutieli: BH at `γ / Σ_{d ≤ D} 1/d`.
    By,
}

impl std::str::FromStr for Correction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bh" => Ok(Correction::Bh),
            "by" => Ok(Correction::By),
            other => Err(Error::Config(format!("unknown correction `{other}` (expected bh or by)"))),
        }
    }
}

impl std::fmt::Display for Correction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Correction::Bh => "bh",
            Correction::By => "by",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// `s(γ)`; `None` when nothing passes.
    pub threshold: Option<f64>,
    /// Selected indices in ascending order.
    pub selected: Vec<usize>,
}

fn check(p: &[f64], gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Config(format!("gamma must be in [0, 1], got {gamma}")));
    }
    if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidInput("p-values must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Relative slack on the step-up bounds, so that a p-value equal to
/// `rγ/D` in exact arithmetic is not lost to rounding in the product.
const BOUND_TOL: f64 = 1e-12;

/// `s(γ) = max{p_(r) : p_(r) ≤ rγ/D}`; selects every `p_j ≤ s(γ)`. A zero
/// budget selects nothing.
pub fn bh_select(p: &[f64], gamma: f64) -> Result<Selection> {
    check(p, gamma)?;
    let d = p.len();
    let mut sorted = p.to_vec();
    sorted.sort_by(f64::total_cmp);
    let threshold = if gamma == 0.0 {
        None
    } else {
        (1..=d).rev().map(|r| sorted[r - 1]).enumerate().find_map(|(i, v)| {
            let r = d - i;
            (v <= r as f64 * gamma / d as f64 * (1.0 + BOUND_TOL)).then_some(v)
        })
    };
    let selected = match threshold {
        Some(s) => (0..d).filter(|&j| p[j] <= s).collect(),
        None => Vec::new(),
    };
    Ok(Selection { threshold, selected })
}

pub fn harmonic(d: usize) -> f64 {
    (1..=d).map(|k| 1.0 / k as f64).sum()
}

pub fn by_select(p: &[f64], gamma: f64) -> Result<Selection> {
    check(p, gamma)?;
    bh_select(p, gamma / harmonic(p.len().max(1)))
}

pub fn select(p: &[f64], gamma: f64, correction: Correction) -> Result<Selection> {
    match correction {
        Correction::Bh => bh_select(p, gamma),
        Correction::By => by_select(p, gamma),
    }
}
