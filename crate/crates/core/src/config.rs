//! Run manifests: one TOML file with `dataset`, `flow`, `mcmc`, `model`,
//! `test`, `replicate` and `output` tables.

use std::path::{Path, PathBuf};

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::data::{read_response_csv, FeatureMatrix};
use crate::error::{Error, Result};
use crate::experiments::{
    gen_mog_features, gen_response, normalize_unit_interval, select_top_correlated, CorrelationRank, MoGSpec, ResponseMode,
    ResponseTemplate,
};
use crate::flow::TrainConfig;
use crate::hrt::{Correction, PipelineConfig, SamplerKind, TieRule};
use crate::models::{ModelConfig, StatisticKind};
use crate::sampler::ChainConfig;
use crate::seed::{derive_seed, stream};

/// Environment variable that replaces the manifest's `seed`.
pub const SEED_ENV: &str = "FLOWSELECT_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Feature CSV with a header row.
    pub features: Option<PathBuf>,
    /// Single-column response CSV with a header row.
    pub response: Option<PathBuf>,
    /// Generate features from this mixture instead of reading a file.
    pub mixture: Option<MoGSpec>,
    /// Shorthand for the three-component benchmark mixture in this dimension.
    pub benchmark_dim: Option<usize>,
    /// Rows to generate.
    pub n: usize,
    /// Seed for generated features; the run seed when absent.
    pub seed: Option<u64>,
    pub response_mode: ResponseMode,
    pub noise_std: f64,
    /// Keep only this many of the most correlated columns.
    pub top_correlated: Option<usize>,
    pub correlation_rank: CorrelationRank,
    /// Min-max scale to `[0, 1]` and add noise of this standard deviation.
    pub normalize_noise: Option<f64>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            features: None,
            response: None,
            mixture: None,
            benchmark_dim: None,
            n: 20_000,
            seed: None,
            response_mode: ResponseMode::Linear,
            noise_std: 1.0,
            top_correlated: None,
            correlation_rank: CorrelationRank::Max,
            normalize_noise: None,
        }
    }
}

impl DatasetConfig {
    pub fn mixture_spec(&self) -> Option<MoGSpec> {
        self.mixture.clone().or_else(|| self.benchmark_dim.map(MoGSpec::benchmark))
    }

    pub fn response_template(&self) -> ResponseTemplate {
        ResponseTemplate {
            noise_std: self.noise_std,
            mode: self.response_mode,
            null: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestConfig {
    pub gamma: f64,
    pub correction: Correction,
    pub statistic: StatisticKind,
    pub ties: TieRule,
    pub sampler: SamplerKind,
    pub train_fraction: f64,
    /// Columns to test; all when absent.
    pub features: Option<Vec<usize>>,
    pub threads: Option<usize>,
}

impl Default for TestConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        TestConfig {
            gamma: p.gamma,
            correction: p.correction,
            statistic: p.statistic,
            ties: p.ties,
            sampler: p.sampler,
            train_fraction: p.train_fraction,
            features: None,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplicateConfig {
    pub count: usize,
    pub gammas: Vec<f64>,
    /// Zero every coefficient.
    pub global_null: bool,
}

impl Default for ReplicateConfig {
    fn default() -> Self {
        ReplicateConfig {
            count: 10,
            gammas: vec![0.05, 0.1, 0.25],
            global_null: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Flow checkpoint to load instead of training; written there otherwise.
    pub checkpoint: Option<PathBuf>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("flowselect-out"),
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub flow: TrainConfig,
    pub mcmc: ChainConfig,
    pub model: ModelConfig,
    pub test: TestConfig,
    pub replicate: ReplicateConfig,
    pub output: OutputConfig,
}

/// A loaded dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: FeatureMatrix,
    pub response: Option<Array1<f64>>,
    /// Known relevant columns when the response was generated here.
    pub relevant: Option<Vec<usize>>,
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Parse a manifest, resolve its relative paths against the file's
    /// directory and apply the seed override from the environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut cfg.dataset.features);
        resolve(base, &mut cfg.dataset.response);
        resolve(base, &mut cfg.output.checkpoint);
        if cfg.output.dir.is_relative() {
            cfg.output.dir = base.join(&cfg.output.dir);
        }
        cfg.apply_seed_override(std::env::var(SEED_ENV).ok().as_deref())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got `{v}`")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        let sources = usize::from(d.features.is_some()) + usize::from(d.mixture.is_some()) + usize::from(d.benchmark_dim.is_some());
        if sources != 1 {
            return Err(Error::Config("dataset needs exactly one of features, mixture or benchmark_dim".into()));
        }
        if let Some(m) = d.mixture_spec() {
            m.validate().map_err(|e| Error::Config(format!("dataset.mixture: {e}")))?;
        }
        if d.features.is_none() && d.n < 2 {
            return Err(Error::Config("dataset.n must be at least 2".into()));
        }
        if !(d.noise_std > 0.0) {
            return Err(Error::Config("dataset.noise_std must be positive".into()));
        }
        self.pipeline_config().validate()
    }

    /// The library configuration this manifest describes.
    pub fn pipeline_config(&self) -> PipelineConfig {
        let t = &self.test;
        PipelineConfig {
            seed: self.seed,
            train_fraction: t.train_fraction,
            flow: self.flow.clone(),
            mcmc: self.mcmc.clone(),
            model: self.model.clone(),
            statistic: t.statistic,
            gamma: t.gamma,
            correction: t.correction,
            ties: t.ties,
            sampler: t.sampler,
            mixture: self.dataset.mixture_spec(),
            features: t.features.clone(),
            cache_dir: Some(self.output.dir.join("cache")),
            resume: false,
            flow_checkpoint: self.output.checkpoint.clone(),
            threads: t.threads,
        }
    }

    /// Read or generate the features, then read or generate a response.
    pub fn load_dataset(&self) -> Result<Dataset> {
        let d = &self.dataset;
        let mut features = match (&d.features, d.mixture_spec()) {
            (Some(p), _) => FeatureMatrix::read_csv(p)?,
            (None, Some(spec)) => gen_mog_features(&spec, d.n, d.seed.unwrap_or(self.seed))?,
            (None, None) => return Err(Error::Config("dataset has no feature source".into())),
        };
        if let Some(m) = d.top_correlated {
            let cols = select_top_correlated(&features, m, d.correlation_rank)?;
            features = features.select_columns(&cols);
        }
        if let Some(noise) = d.normalize_noise {
            features = normalize_unit_interval(&features, noise, derive_seed(self.seed, &[stream::NOISE]))?.features;
        }
        let (response, relevant) = match &d.response {
            Some(p) => {
                let y = read_response_csv(p)?;
                if y.len() != features.n_rows() {
                    return Err(Error::Mismatch(format!(
                        "{} responses for {} feature rows",
                        y.len(),
                        features.n_rows()
                    )));
                }
                (Some(y), None)
            }
            None => {
                let spec = d.response_template().draw(features.n_cols(), derive_seed(self.seed, &[stream::RESPONSE]));
                let y = gen_response(features.values(), &spec)?;
                (Some(y), Some(spec.relevant()))
            }
        };
        Ok(Dataset {
            features,
            response,
            relevant,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_roundtrips() {
        let mut c = RunConfig::default();
        c.dataset.benchmark_dim = Some(4);
        c.seed = 99;
        c.mcmc.k = 37;
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_reported() {
        let e = RunConfig::from_toml("[mcmc]\nkk = 3\n").unwrap_err().to_string();
        assert!(e.contains("kk"), "{e}");
    }

    #[test]
    fn seed_override() {
        let mut c = RunConfig::default();
        c.apply_seed_override(Some("12")).unwrap();
        assert_eq!(c.seed, 12);
        assert!(c.apply_seed_override(Some("x")).is_err());
    }

    #[test]
    fn exactly_one_source() {
        let mut c = RunConfig::default();
        assert!(c.validate().is_err());
        c.dataset.benchmark_dim = Some(3);
        c.validate().unwrap();
        c.dataset.features = Some("a.csv".into());
        assert!(c.validate().is_err());
    }
}
