//! Binary encodings of fitted models.
//!
//! Lasso: header `D, converged, curve length`; arrays `beta`,
//! `[intercept, λ]`, curve penalties, curve errors.
//! Forest: header `D, trees, min leaf, features per split (0 = default),
//! max depth (0 = none), bootstrap, seed low, seed high`; per tree the node
//! features (−1 for leaves), thresholds, left and right children, values.
//! Network: header `layers, widths...`; per layer weights (row-major) and
//! biases, then `[dropout]`.

use std::path::Path;

use ndarray::{Array1, Array2};

use super::forest::{ForestConfig, ForestModel, Tree, LEAF};
use super::lasso::LassoModel;
use super::mlp::MlpModel;
use super::Model;
use crate::container::{as_index, Container, MAGIC_FOREST, MAGIC_LASSO, MAGIC_MLP};
use crate::error::{Error, Result};

fn err(kind: &'static str, msg: impl Into<String>) -> Error {
    Error::format(kind, msg)
}

fn expect_magic(c: &Container, magic: [u8; 4], kind: &'static str) -> Result<()> {
    if c.magic != magic {
        return Err(err(kind, "wrong container magic"));
    }
    Ok(())
}

impl LassoModel {
    pub fn to_container(&self) -> Container {
        let mut c = Container::new(MAGIC_LASSO);
        c.header = vec![self.beta.len() as u32, u32::from(self.converged), self.cv_curve.len() as u32];
        c.arrays.push(self.beta.to_vec());
        c.arrays.push(vec![self.intercept, self.lambda_selected]);
        c.arrays.push(self.cv_curve.iter().map(|p| p.0).collect());
        c.arrays.push(self.cv_curve.iter().map(|p| p.1).collect());
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        const K: &str = "lasso model";
        expect_magic(c, MAGIC_LASSO, K)?;
        if c.header.len() != 3 {
            return Err(err(K, "header must have 3 words"));
        }
        let d = c.header[0] as usize;
        let n_cv = c.header[2] as usize;
        let mut cur = c.array_cursor();
        let beta = cur.take("beta", Some(d))?;
        let scalars = cur.take("intercept and penalty", Some(2))?;
        let lams = cur.take("curve penalties", Some(n_cv))?;
        let errs = cur.take("curve errors", Some(n_cv))?;
        cur.finish()?;
        if beta.iter().chain(scalars).any(|v| !v.is_finite()) || !(scalars[1] > 0.0) {
            return Err(err(K, "non-finite coefficients or non-positive penalty"));
        }
        Ok(LassoModel {
            beta: Array1::from(beta.to_vec()),
            intercept: scalars[0],
            lambda_selected: scalars[1],
            cv_curve: lams.iter().copied().zip(errs.iter().copied()).collect(),
            converged: c.header[1] != 0,
        })
    }
}

impl ForestModel {
    pub fn to_container(&self) -> Container {
        let mut c = Container::new(MAGIC_FOREST);
        let cfg = &self.config;
        c.header = vec![
            self.n_features as u32,
            self.trees.len() as u32,
            cfg.min_samples_leaf as u32,
            cfg.features_per_split.unwrap_or(0) as u32,
            cfg.max_depth.unwrap_or(0) as u32,
            u32::from(cfg.bootstrap),
            cfg.seed as u32,
            (cfg.seed >> 32) as u32,
        ];
        for t in &self.trees {
            c.arrays
                .push(t.feature.iter().map(|&f| if f == LEAF { -1.0 } else { f as f64 }).collect());
            c.arrays.push(t.threshold.clone());
            c.arrays.push(t.left.iter().map(|&v| v as f64).collect());
            c.arrays.push(t.right.iter().map(|&v| v as f64).collect());
            c.arrays.push(t.value.clone());
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        const K: &str = "forest model";
        expect_magic(c, MAGIC_FOREST, K)?;
        if c.header.len() != 8 {
            return Err(err(K, "header must have 8 words"));
        }
        let h = &c.header;
        let d = h[0] as usize;
        let n_trees = h[1] as usize;
        if d == 0 || n_trees == 0 {
            return Err(err(K, "empty forest"));
        }
        if c.arrays.len() != 5 * n_trees {
            return Err(err(K, format!("{} arrays for {n_trees} trees", c.arrays.len())));
        }
        let mut cur = c.array_cursor();
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let feat = cur.take("features", None)?;
            let n = feat.len();
            if n == 0 {
                return Err(err(K, "tree without nodes"));
            }
            let threshold = cur.take("thresholds", Some(n))?.to_vec();
            let left = cur.take("left children", Some(n))?;
            let right = cur.take("right children", Some(n))?;
            let value = cur.take("values", Some(n))?.to_vec();
            let mut t = Tree {
                feature: Vec::with_capacity(n),
                threshold,
                left: Vec::with_capacity(n),
                right: Vec::with_capacity(n),
                value,
            };
            for k in 0..n {
                if feat[k] == -1.0 {
                    t.feature.push(LEAF);
                    t.left.push(0);
                    t.right.push(0);
                    continue;
                }
                let f = as_index(feat[k], "split feature")?;
                let l = as_index(left[k], "left child")?;
                let r = as_index(right[k], "right child")?;
                // children after their parent rules out cycles
                if f >= d || l <= k || r <= k || l >= n || r >= n || !t.threshold[k].is_finite() {
                    return Err(err(K, format!("node {k} is malformed")));
                }
                t.feature.push(f as u32);
                t.left.push(l as u32);
                t.right.push(r as u32);
            }
            if t.value.iter().any(|v| !v.is_finite()) {
                return Err(err(K, "non-finite leaf value"));
            }
            trees.push(t);
        }
        let opt = |v: u32| if v == 0 { None } else { Some(v as usize) };
        Ok(ForestModel {
            trees,
            n_features: d,
            config: ForestConfig {
                n_trees,
                max_depth: opt(h[4]),
                min_samples_leaf: h[2] as usize,
                features_per_split: opt(h[3]),
                bootstrap: h[5] != 0,
                seed: u64::from(h[6]) | (u64::from(h[7]) << 32),
            },
        })
    }
}

impl MlpModel {
    pub fn to_container(&self) -> Container {
        let mut c = Container::new(MAGIC_MLP);
        c.header = vec![self.weights.len() as u32, self.weights[0].nrows() as u32];
        c.header.extend(self.weights.iter().map(|w| w.ncols() as u32));
        for (w, b) in self.weights.iter().zip(&self.biases) {
            c.arrays.push(w.iter().copied().collect());
            c.arrays.push(b.to_vec());
        }
        c.arrays.push(vec![self.dropout_rate]);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        const K: &str = "network model";
        expect_magic(c, MAGIC_MLP, K)?;
        let layers = c.header_word(0, "layers")? as usize;
        if layers == 0 || c.header.len() != layers + 2 {
            return Err(err(K, "header does not match the layer count"));
        }
        let sizes: Vec<usize> = c.header[1..].iter().map(|&v| v as usize).collect();
        let mut cur = c.array_cursor();
        let mut weights = Vec::with_capacity(layers);
        let mut biases = Vec::with_capacity(layers);
        for l in 0..layers {
            let (i, o) = (sizes[l], sizes[l + 1]);
            let n = i.checked_mul(o).ok_or_else(|| err(K, "layer size overflow"))?;
            let w = cur.take("weights", Some(n))?;
            let b = cur.take("biases", Some(o))?;
            if w.iter().chain(b).any(|v| !v.is_finite()) {
                return Err(err(K, "non-finite parameter"));
            }
            weights.push(Array2::from_shape_vec((i, o), w.to_vec()).map_err(|e| err(K, e.to_string()))?);
            biases.push(Array1::from(b.to_vec()));
        }
        let dropout = cur.take("dropout", Some(1))?[0];
        cur.finish()?;
        MlpModel::new(weights, biases, dropout).map_err(|e| err(K, e.to_string()))
    }
}

impl Model {
    pub fn to_container(&self) -> Container {
        match self {
            Model::Lasso(m) => m.to_container(),
            Model::Forest(m) => m.to_container(),
            Model::Mlp(m) => m.to_container(),
        }
    }

    /// Dispatches on the container magic.
    pub fn from_container(c: &Container) -> Result<Self> {
        match c.magic {
            MAGIC_LASSO => LassoModel::from_container(c).map(Model::Lasso),
            MAGIC_FOREST => ForestModel::from_container(c).map(Model::Forest),
            MAGIC_MLP => MlpModel::from_container(c).map(Model::Mlp),
            _ => Err(err("model", "not a model container")),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_container().encode()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_container(&Container::decode(bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write_to(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
