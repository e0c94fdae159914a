//! Holdout randomization tests: statistics, p-values, multiple-testing
//! corrections and the end-to-end pipeline.

pub mod correction;
pub mod pipeline;
pub mod pvalue;
pub mod report;
pub mod split;
pub mod statistic;

pub use correction::{bh_select, by_select, harmonic, select, Correction, Selection};
pub use pipeline::{build_null_library, feature_key, fit_flow_stage, run_pipeline, test_with_library, NullLibrary, PipelineConfig, SamplerKind};
pub use pvalue::{empirical_pvalue, NullCounts, TieRule};
pub use report::{read_report_csv, FeatureResult, StageTiming, TestReport};
pub use split::SplitSpec;
pub use statistic::{null_statistics, observed_statistic};
