//! The three-step procedure: fit a joint density on training rows, draw
//! null features for test rows, then test every feature with a model fitted
//! on training rows.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::correction::{select, Correction};
use super::pvalue::{NullCounts, TieRule};
use super::report::{FeatureResult, StageTiming, TestReport};
use super::split::SplitSpec;
use super::statistic::{null_statistics, observed_statistic};
use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::experiments::mog::{MoGDensity, MoGSpec};
use crate::flow::{train_flow, FlowModel, TrainConfig, TrainedFlow};
use crate::models::{fit_model, ModelConfig, StatisticKind};
use crate::sampler::{sample_exact_nulls, sample_null_features, ChainConfig, ConditionalGaussian, JointDensity, NullSamples};
use crate::seed::{derive_seed, rng_for, stream};

/// Where null draws come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Metropolis–Hastings on a flow fitted to the training rows.
    #[default]
    Flow,
    /// Metropolis–Hastings on the known mixture density.
    MixtureDensity,
    /// Exact draws from the known mixture's conditionals.
    MixtureExact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; every stage seed is derived from it and overrides the
    /// `seed` fields of the nested configs.
    pub seed: u64,
    pub train_fraction: f64,
    pub flow: TrainConfig,
    pub mcmc: ChainConfig,
    pub model: ModelConfig,
    pub statistic: StatisticKind,
    pub gamma: f64,
    pub correction: Correction,
    pub ties: TieRule,
    pub sampler: SamplerKind,
    /// Generating mixture, required by the mixture samplers.
    pub mixture: Option<MoGSpec>,
    /// Columns to test; all when absent.
    pub features: Option<Vec<usize>>,
    /// Directory for the flow checkpoint and null-draw caches.
    pub cache_dir: Option<PathBuf>,
    /// Reuse artifacts found in `cache_dir` instead of recomputing them.
    pub resume: bool,
    /// Flow checkpoint to use instead of training one, when the file exists.
    pub flow_checkpoint: Option<PathBuf>,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            train_fraction: 0.5,
            flow: TrainConfig::default(),
            mcmc: ChainConfig::default(),
            model: ModelConfig::default(),
            statistic: StatisticKind::Lasso,
            gamma: 0.1,
            correction: Correction::Bh,
            ties: TieRule::Randomized,
            sampler: SamplerKind::Flow,
            mixture: None,
            features: None,
            cache_dir: None,
            resume: false,
            flow_checkpoint: None,
            threads: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("test.gamma must be in [0, 1], got {}", self.gamma)));
        }
        self.mcmc.validate()?;
        if self.sampler == SamplerKind::Flow {
            self.flow.validate()?;
        } else if self.mixture.is_none() {
            return Err(Error::Config("the mixture samplers need dataset.mixture".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        Ok(())
    }

    /// The seeded train/test split for `n` rows.
    pub fn split(&self, n: usize) -> Result<SplitSpec> {
        SplitSpec::random(n, self.train_fraction, derive_seed(self.seed, &[stream::SPLIT]))
    }

    /// Stage configs with their seeds derived from the master seed.
    pub fn flow_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, &[stream::FLOW_INIT]),
            ..self.flow.clone()
        }
    }

    fn model_config(&self, replicate_seed: u64) -> ModelConfig {
        let mut m = self.model.clone();
        m.lasso.seed = derive_seed(replicate_seed, &[stream::LASSO_FOLDS]);
        m.forest.seed = derive_seed(replicate_seed, &[stream::FOREST]);
        m.mlp.seed = derive_seed(replicate_seed, &[stream::MLP]);
        m
    }

    /// Everything that determines the null draws, for cache validation.
    fn library_fingerprint(&self, n: usize, d: usize) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            n: usize,
            d: usize,
            seed: u64,
            train_fraction: f64,
            flow: &'a TrainConfig,
            mcmc: &'a ChainConfig,
            sampler: SamplerKind,
            mixture: &'a Option<MoGSpec>,
        }
        serde_json::to_string(&Key {
            n,
            d,
            seed: self.seed,
            train_fraction: self.train_fraction,
            flow: &self.flow,
            mcmc: &self.mcmc,
            sampler: self.sampler,
            mixture: &self.mixture,
        })
        .expect("fingerprint serializes")
    }

    fn tested(&self, d: usize) -> Result<Vec<usize>> {
        match &self.features {
            None => Ok((0..d).collect()),
            Some(f) => {
                if let Some(&bad) = f.iter().find(|&&j| j >= d) {
                    return Err(Error::InvalidInput(format!("feature index {bad} out of range for {d} features")));
                }
                let mut seen = f.clone();
                seen.sort_unstable();
                seen.dedup();
                if seen.len() != f.len() {
                    return Err(Error::InvalidInput("repeated feature index".into()));
                }
                Ok(f.clone())
            }
        }
    }
}

/// Stream key for a column: a hash of its name, so random streams follow
/// features when columns are reordered.
pub fn feature_key(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// Step 1 alone: fit the flow on the training rows of the seeded split.
pub fn fit_flow_stage(x: &FeatureMatrix, config: &PipelineConfig) -> Result<TrainedFlow> {
    config.flow.validate()?;
    let split = config.split(x.n_rows()).map_err(|e| e.in_stage("split"))?;
    train_flow(&x.select_rows(&split.train), &config.flow_config()).map_err(|e| e.in_stage("flow"))
}

/// Null draws for the test rows of every tested feature.
#[derive(Debug, Clone)]
pub struct NullLibrary {
    pub split: SplitSpec,
    /// Tested column indices, in test order.
    pub features: Vec<usize>,
    /// One entry per tested feature, aligned with `features`.
    pub nulls: Vec<NullSamples>,
    pub flow: Option<FlowModel>,
    pub timings: Vec<StageTiming>,
}

impl NullLibrary {
    pub fn k(&self) -> usize {
        self.nulls.first().map_or(0, |n| n.k())
    }

    /// The same library keeping only the first `k` draws.
    pub fn truncated(&self, k: usize) -> NullLibrary {
        NullLibrary {
            nulls: self.nulls.iter().map(|n| n.truncated(k)).collect(),
            ..self.clone()
        }
    }
}

fn timed<T>(timings: &mut Vec<StageTiming>, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t0 = Instant::now();
    let out = f().map_err(|e| e.in_stage(stage))?;
    timings.push(StageTiming {
        stage: stage.to_string(),
        seconds: t0.elapsed().as_secs_f64(),
    });
    Ok(out)
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn cache_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn check_fingerprint(dir: &Path, fingerprint: &str, resume: bool) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let path = cache_path(dir, "library.json");
    if resume && path.exists() {
        let old = std::fs::read_to_string(&path)?;
        if old.trim() != fingerprint {
            return Err(Error::Mismatch(format!(
                "{} was written by a different configuration",
                path.display()
            )));
        }
    } else {
        std::fs::write(&path, format!("{fingerprint}\n"))?;
    }
    Ok(())
}

/// Steps 1 and 2: split, fit the density and draw nulls for every tested
/// feature. With a cache directory, every artifact is written as soon as it
/// exists and `resume` picks finished ones up again.
pub fn build_null_library(x: &FeatureMatrix, config: &PipelineConfig) -> Result<NullLibrary> {
    config.validate()?;
    x.check_finite()?;
    let (n, d) = (x.n_rows(), x.n_cols());
    let features = config.tested(d)?;
    let mut timings = Vec::new();
    let cache = config.cache_dir.as_deref();
    if let Some(dir) = cache {
        check_fingerprint(dir, &config.library_fingerprint(n, d), config.resume).map_err(|e| e.in_stage("cache"))?;
    }
    let split = timed(&mut timings, "split", || config.split(n))?;
    let train = x.select_rows(&split.train);
    let x_test = x.values().select(Axis(0), &split.test);

    let flow = if config.sampler == SamplerKind::Flow {
        Some(timed(&mut timings, "flow", || {
            let path = cache.map(|d| cache_path(d, "flow.fsfl"));
            let existing = config
                .flow_checkpoint
                .as_ref()
                .filter(|p| p.exists())
                .or(path.as_ref().filter(|p| config.resume && p.exists()));
            if let Some(p) = existing {
                let m = FlowModel::load(p)?;
                if m.dim() != d {
                    return Err(Error::Mismatch(format!("checkpoint has {} features, data has {d}", m.dim())));
                }
                return Ok(m);
            }
            let trained = train_flow(&train, &config.flow_config())?;
            if let Some(p) = &config.flow_checkpoint {
                trained.model.save(p)?;
            }
            if let Some(p) = &path {
                trained.model.save(p)?;
                trained.write_metrics_csv(&cache_path(cache.expect("cache dir"), "flow_metrics.csv"))?;
            }
            Ok(trained.model)
        })?)
    } else {
        None
    };
    let mixture = match (&config.mixture, config.sampler) {
        (Some(spec), SamplerKind::MixtureDensity | SamplerKind::MixtureExact) => {
            if spec.dim != d {
                return Err(Error::Mismatch(format!("mixture has {} features, data {d}", spec.dim)).in_stage("sampling"));
            }
            Some(MoGDensity::new(spec.clone())?)
        }
        _ => None,
    };
    let proposal = timed(&mut timings, "proposal", || ConditionalGaussian::fit(train.values()))?;
    let density: Option<&dyn JointDensity> = match (&flow, &mixture) {
        (Some(f), _) => Some(f),
        (None, Some(m)) if config.sampler == SamplerKind::MixtureDensity => Some(m),
        _ => None,
    };
    let chain_seed = derive_seed(config.seed, &[stream::CHAIN]);
    let names = x.names();
    let nulls = timed(&mut timings, "sampling", || {
        in_pool(config.threads, || {
            features
                .par_iter()
                .map(|&j| {
                    let path = cache.map(|dir| cache_path(dir, &format!("nulls_{j}.fsns")));
                    if let Some(p) = path.as_ref().filter(|p| config.resume && p.exists()) {
                        let s = NullSamples::load(p)?;
                        if s.feature != j || s.n_rows() != split.test.len() || s.k() != config.mcmc.k {
                            return Err(Error::Mismatch(format!("{} does not match this run", p.display())));
                        }
                        return Ok(s);
                    }
                    let cfg = ChainConfig {
                        seed: chain_seed,
                        stream_key: Some(feature_key(&names[j])),
                        ..config.mcmc.clone()
                    };
                    let s = match (density, &config.mixture) {
                        (Some(dens), _) => sample_null_features(x_test.view(), &split.test, j, dens, &proposal, &cfg)?,
                        (None, Some(spec)) => sample_exact_nulls(x_test.view(), &split.test, j, spec, &cfg)?,
                        (None, None) => unreachable!("validated sampler configuration"),
                    };
                    if let Some(p) = &path {
                        s.save(p)?;
                    }
                    Ok(s)
                })
                .collect::<Result<Vec<_>>>()
        })?
    })?;
    Ok(NullLibrary {
        split,
        features,
        nulls,
        flow,
        timings,
    })
}

/// Step 3 on a prepared library: fit the model on training rows and test
/// every feature on the test rows. `replicate_seed` keys the model fit and
/// tie breaking.
pub fn test_with_library(
    x: &FeatureMatrix,
    y: ArrayView1<'_, f64>,
    library: &NullLibrary,
    config: &PipelineConfig,
    replicate_seed: u64,
) -> Result<TestReport> {
    if y.len() != x.n_rows() {
        return Err(Error::Mismatch(format!("{} responses for {} rows", y.len(), x.n_rows())));
    }
    if !(0.0..=1.0).contains(&config.gamma) {
        return Err(Error::Config(format!("test.gamma must be in [0, 1], got {}", config.gamma)));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite response".into()));
    }
    library.split.validate(x.n_rows())?;
    let mut timings = library.timings.clone();
    let v = x.values();
    let x_train = v.select(Axis(0), &library.split.train);
    let y_train = y.select(Axis(0), &library.split.train);
    let x_test = v.select(Axis(0), &library.split.test);
    let y_test = y.select(Axis(0), &library.split.test);
    let model = timed(&mut timings, "model", || {
        fit_model(config.statistic, x_train.view(), y_train.view(), &config.model_config(replicate_seed))
    })?;
    let t_star = observed_statistic(&model, x_test.view(), y_test.view()).map_err(|e| e.in_stage("statistics"))?;
    let tie_seed = derive_seed(replicate_seed, &[stream::TIES]);
    let names = x.names();
    let counts = timed(&mut timings, "statistics", || {
        in_pool(config.threads, || {
            library
                .features
                .par_iter()
                .zip(&library.nulls)
                .map(|(&j, nulls)| {
                    let t = null_statistics(&model, x_test.view(), y_test.view(), j, nulls)?;
                    Ok(NullCounts::new(t_star, &t))
                })
                .collect::<Result<Vec<_>>>()
        })?
    })?;
    let p: Vec<f64> = library
        .features
        .iter()
        .zip(&counts)
        .map(|(&j, c)| c.pvalue(config.ties, &mut rng_for(tie_seed, &[feature_key(&names[j])])))
        .collect();
    let sel = timed(&mut timings, "correction", || select(&p, config.gamma, config.correction))?;
    let features = library
        .features
        .iter()
        .enumerate()
        .map(|(i, &j)| FeatureResult {
            feature: j,
            name: names[j].clone(),
            p_value: p[i],
            selected: sel.selected.binary_search(&i).is_ok(),
            exceedances: counts[i].greater,
            ties: counts[i].ties,
            acceptance_rate: library.nulls[i].mean_acceptance(),
        })
        .collect();
    Ok(TestReport {
        features,
        observed_statistic: t_star,
        statistic: config.statistic,
        gamma: config.gamma,
        correction: config.correction,
        threshold: sel.threshold,
        k: library.k(),
        ties: config.ties,
        seed: replicate_seed,
        timings,
    })
}

/// The full procedure on `(x, y)`.
pub fn run_pipeline(x: &FeatureMatrix, y: ArrayView1<'_, f64>, config: &PipelineConfig) -> Result<TestReport> {
    if y.len() != x.n_rows() {
        return Err(Error::Mismatch(format!("{} responses for {} rows", y.len(), x.n_rows())));
    }
    let library = build_null_library(x, config)?;
    test_with_library(x, y, &library, config, config.seed)
}
