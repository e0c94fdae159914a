//! Null-feature samplers for the complete conditionals of a joint density.

mod cache;
pub mod density;
pub mod gibbs;
pub mod mh;
pub mod oracle;
pub mod proposal;

pub use density::{ColumnEvaluator, JointDensity};
pub use gibbs::{enumerate_conditional, gibbs_discrete};
pub use mh::{log_acceptance, mh_chain, sample_null_features, ChainConfig, ChainInit, ChainOutput, NullSamples};
pub use oracle::{exact_mog_conditional, sample_exact_nulls, MoGConditional, MoGConditioner};
pub use proposal::{conditional_proposal_std, ConditionalGaussian};
