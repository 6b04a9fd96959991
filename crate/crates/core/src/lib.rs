//! Memory-bounded embedding compression driven by a streaming top-k
//! importance sketch.
//!
//! Features are classified as hot, medium or cold by [`sketch::HotSketch`].
//! Hot features own a unique embedding row, medium features pool rows from
//! several shared hash tables, and cold features use a single shared row.
//! [`store::EmbeddingStore`] owns the tables and the memory ledger,
//! [`trainer`] runs a small SGD loop over the compressed store, and
//! [`eval`] holds the exact oracles and bound evaluators used to validate
//! the sketch.

pub mod codec;
pub mod eval;
pub mod hash;
pub mod importance;
pub mod sketch;
pub mod store;
pub mod trainer;
pub mod workload;

pub use sketch::{FeatureId, FeatureClass, HotSketch, QueryResult, SketchConfig, SlotOutcome};
pub use store::{BudgetPlan, BudgetRequest, EmbeddingRef, EmbeddingStore, MigrationEvent, TableRef};
pub use trainer::{ModelSpec, StepMetrics, TrainConfig, TrainMode, Trainer};

pub use workload::{StreamEvent, ZipfStream, ZipfStreamSpec};
