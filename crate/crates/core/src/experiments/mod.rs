//! Synthetic benchmarks, semi-synthetic ingestion and selection metrics.

pub mod metrics;
pub mod mog;
pub mod replicate;
pub mod response;
pub mod semi;

pub use metrics::{evaluate_selection, SelectionMetrics};
pub use mog::{gen_mog_features, MoGDensity, MoGSpec};
pub use replicate::{aggregate, read_replicates_csv, replicate_experiment, replicate_seed, replicate_with_library, score_report, verify_records, ExperimentResult, GammaAggregate, ReplicateRecord, ResponseTemplate};
pub use response::{gen_response, n_relevant, ResponseMode, ResponseSpec};
pub use semi::{correlation_matrix, normalize_unit_interval, select_top_correlated, CorrelationRank, Normalized};
