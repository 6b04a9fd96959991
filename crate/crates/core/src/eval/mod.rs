//! Ground truth and verification: exact top-k and SpaceSaving oracles,
//! recall metrics, closed-form and numerical retention bounds, Monte-Carlo
//! retention estimates and a throughput probe.

pub mod bounds;
pub mod montecarlo;
pub mod oracle;
pub mod recall;
pub mod throughput;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("parameter outside the domain: {0}")]
    DomainError(String),
    #[error(transparent)]
    Sketch(#[from] crate::sketch::SketchError),
    #[error("corrupt evaluator state: {0}")]
    CorruptState(String),
}

pub use bounds::{optimal_slots_per_bucket, retention_lower_bound, zipf_retention_lower_bound, EtaGrid, SlotRecommendation, ZipfBound};
pub use montecarlo::{retention_frequency, RetentionEstimate, RetentionTrial};
pub use oracle::{reference_spacesaving, ExactTopK, SpaceSaving};
pub use recall::{matched_memory_recall, recall_at_k, RecallPoint, SlidingWindowRecall, WindowRecall};
pub use throughput::{throughput_bench, ThroughputSample};
