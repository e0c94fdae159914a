//! Regression forest: bootstrap samples, random feature subsets per split,
//! greedy variance-reduction splits, mean leaves.

use ndarray::{Array1, ArrayView1, ArrayView2};
use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{rng_for, stream, Rng};

pub(crate) const LEAF: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows until the leaf-size limit stops it.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Features tried at each split; `None` means `⌈D/3⌉`.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: None,
            min_samples_leaf: 5,
            features_per_split: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

/// Flat binary tree. Node `k` is a leaf when `feature[k] == LEAF`;
/// otherwise rows with `x[feature] <= threshold` go to `left`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub feature: Vec<u32>,
    pub threshold: Vec<f64>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    pub value: Vec<f64>,
}

impl Tree {
    fn push_leaf(&mut self, value: f64) -> usize {
        self.feature.push(LEAF);
        self.threshold.push(0.0);
        self.left.push(0);
        self.right.push(0);
        self.value.push(value);
        self.feature.len() - 1
    }

    pub fn n_nodes(&self) -> usize {
        self.feature.len()
    }

    pub fn predict_row(&self, row: ArrayView1<'_, f64>) -> f64 {
        let mut k = 0usize;
        loop {
            let f = self.feature[k];
            if f == LEAF {
                return self.value[k];
            }
            k = if row[f as usize] <= self.threshold[k] {
                self.left[k]
            } else {
                self.right[k]
            } as usize;
        }
    }

    /// The prediction as a step function of feature `j` with the rest of
    /// `row` fixed: pushes `(breakpoint, jump)` pairs into `jumps` and
    /// returns the value far to the left.
    fn step_function(&self, row: ArrayView1<'_, f64>, j: usize, jumps: &mut Vec<(f64, f64)>) -> f64 {
        // intervals (lo, hi] of x_j that reach each leaf
        let mut stack = vec![(0usize, f64::NEG_INFINITY, f64::INFINITY)];
        let mut pieces: Vec<(f64, f64)> = Vec::new();
        while let Some((k, lo, hi)) = stack.pop() {
            let f = self.feature[k];
            if f == LEAF {
                pieces.push((lo, self.value[k]));
                continue;
            }
            let (l, r) = (self.left[k] as usize, self.right[k] as usize);
            if f as usize == j {
                let t = self.threshold[k];
                if t > lo {
                    stack.push((l, lo, hi.min(t)));
                }
                if t < hi {
                    stack.push((r, lo.max(t), hi));
                }
            } else if row[f as usize] <= self.threshold[k] {
                stack.push((l, lo, hi));
            } else {
                stack.push((r, lo, hi));
            }
        }
        pieces.sort_by(|a, b| a.0.total_cmp(&b.0));
        let first = pieces[0].1;
        for w in pieces.windows(2) {
            jumps.push((w[1].0, w[1].1 - w[0].1));
        }
        first
    }

    /// Every internal node's children partition its rows; used by tests.
    pub fn check_structure(&self) -> bool {
        (0..self.n_nodes()).all(|k| {
            self.feature[k] == LEAF
                || ((self.left[k] as usize) < self.n_nodes()
                    && (self.right[k] as usize) < self.n_nodes()
                    && self.left[k] as usize > k
                    && self.right[k] as usize > k)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub n_features: usize,
    pub config: ForestConfig,
}

struct Builder<'a> {
    x: ArrayView2<'a, f64>,
    y: ArrayView1<'a, f64>,
    min_leaf: usize,
    max_depth: usize,
    mtry: usize,
    rng: Rng,
    tree: Tree,
    order: Vec<(f64, f64)>,
}

impl Builder<'_> {
    fn build(&mut self, rows: &mut [usize], depth: usize) -> usize {
        let n = rows.len();
        let sum: f64 = rows.iter().map(|&i| self.y[i]).sum();
        let mean = sum / n as f64;
        if depth >= self.max_depth || n < 2 * self.min_leaf {
            return self.tree.push_leaf(mean);
        }
        let d = self.x.ncols();
        let mut feats: Vec<usize> = sample(&mut self.rng, d, self.mtry).into_vec();
        feats.sort_unstable();
        let total_sq: f64 = rows.iter().map(|&i| self.y[i] * self.y[i]).sum();
        let parent_sse = total_sq - sum * sum / n as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        for &f in &feats {
            self.order.clear();
            self.order.extend(rows.iter().map(|&i| (self.x[[i, f]], self.y[i])));
            self.order.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            let mut left_sq = 0.0;
            for k in 0..n - 1 {
                let (v, t) = self.order[k];
                left_sum += t;
                left_sq += t * t;
                let nl = k + 1;
                if nl < self.min_leaf || n - nl < self.min_leaf {
                    continue;
                }
                let next = self.order[k + 1].0;
                if next <= v {
                    continue;
                }
                let right_sum = sum - left_sum;
                let sse = (left_sq - left_sum * left_sum / nl as f64)
                    + (total_sq - left_sq - right_sum * right_sum / (n - nl) as f64);
                let gain = parent_sse - sse;
                // strict comparison keeps the lowest feature, then lowest threshold
                if gain > 1e-12 * parent_sse.abs().max(1e-300) && best.is_none_or(|b| gain > b.0) {
                    best = Some((gain, f, 0.5 * (v + next)));
                }
            }
        }
        let Some((_, f, thr)) = best else {
            return self.tree.push_leaf(mean);
        };
        let node = self.tree.push_leaf(mean);
        self.tree.feature[node] = f as u32;
        self.tree.threshold[node] = thr;
        let mut split = 0;
        for k in 0..n {
            if self.x[[rows[k], f]] <= thr {
                rows.swap(k, split);
                split += 1;
            }
        }
        let (l, r) = rows.split_at_mut(split);
        let li = self.build(l, depth + 1);
        let ri = self.build(r, depth + 1);
        self.tree.left[node] = li as u32;
        self.tree.right[node] = ri as u32;
        node
    }
}

pub fn fit_random_forest(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, config: &ForestConfig) -> Result<ForestModel> {
    let (n, d) = x.dim();
    if n != y.len() {
        return Err(Error::InvalidInput(format!("{n} feature rows but {} responses", y.len())));
    }
    if n < 2 || d == 0 {
        return Err(Error::InvalidInput("random forest needs at least two rows and one feature".into()));
    }
    if config.n_trees == 0 || config.min_samples_leaf == 0 {
        return Err(Error::Config("model.forest n_trees and min_samples_leaf must be at least 1".into()));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite training data".into()));
    }
    let mtry = config.features_per_split.unwrap_or(d.div_ceil(3)).clamp(1, d);
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(config.seed, &[stream::FOREST, t as u64]);
            let mut rows: Vec<usize> = if config.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut b = Builder {
                x,
                y,
                min_leaf: config.min_samples_leaf,
                max_depth: config.max_depth.unwrap_or(usize::MAX),
                mtry,
                rng,
                tree: Tree {
                    feature: Vec::new(),
                    threshold: Vec::new(),
                    left: Vec::new(),
                    right: Vec::new(),
                    value: Vec::new(),
                },
                order: Vec::with_capacity(n),
            };
            b.build(&mut rows, 0);
            b.tree
        })
        .collect();
    Ok(ForestModel {
        trees,
        n_features: d,
        config: config.clone(),
    })
}

impl ForestModel {
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::InvalidInput(format!(
                "forest has {} features, input has {}",
                self.n_features,
                x.ncols()
            )));
        }
        let k = self.trees.len() as f64;
        Ok(x.rows()
            .into_iter()
            .map(|r| self.trees.iter().map(|t| t.predict_row(r)).sum::<f64>() / k)
            .collect())
    }

    /// The forest's prediction for `row` as a function of feature `j`.
    pub fn column_response(&self, row: ArrayView1<'_, f64>, j: usize) -> StepFunction {
        let mut jumps = Vec::new();
        let mut base = 0.0;
        for t in &self.trees {
            base += t.step_function(row, j, &mut jumps);
        }
        jumps.sort_by(|a, b| a.0.total_cmp(&b.0));
        let k = self.trees.len() as f64;
        let mut breaks = Vec::with_capacity(jumps.len());
        let mut values = Vec::with_capacity(jumps.len() + 1);
        let mut acc = base;
        values.push(acc / k);
        for (b, dv) in jumps {
            acc += dv;
            breaks.push(b);
            values.push(acc / k);
        }
        StepFunction { breaks, values }
    }
}

/// Right-continuous-from-the-left step function: value `values[m]` where
/// `m` counts breakpoints strictly below the argument.
#[derive(Debug, Clone)]
pub struct StepFunction {
    breaks: Vec<f64>,
    values: Vec<f64>,
}

impl StepFunction {
    pub fn eval(&self, v: f64) -> f64 {
        self.values[self.breaks.partition_point(|&b| b < v)]
    }
}
