//! False discovery proportion and power of a selection.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub fdp: f64,
    /// `None` when nothing is relevant.
    pub power: Option<f64>,
}

/// `FDP = |S∖R| / max(|S|, 1)` and `power = |S∩R| / |R|`.
pub fn evaluate_selection(selected: &[usize], relevant: &[usize]) -> SelectionMetrics {
    let mut s = selected.to_vec();
    s.sort_unstable();
    s.dedup();
    let mut r = relevant.to_vec();
    r.sort_unstable();
    r.dedup();
    let hits = s.iter().filter(|j| r.binary_search(j).is_ok()).count();
    let false_hits = s.len() - hits;
    SelectionMetrics {
        fdp: false_hits as f64 / s.len().max(1) as f64,
        power: if r.is_empty() {
            None
        } else {
            Some(hits as f64 / r.len() as f64)
        },
    }
}
