//! Scoring functions, pacing functions, and the batch scheduler.

mod pacing;
mod plan;
mod scoring;

pub use pacing::{pace, PacingConfig, PacingShape};
pub use plan::{build_plan, CurriculumPlan};
pub use scoring::{
    score_by_count, score_dataset, score_self_taught, score_transfer, score_with_predictor,
    SampleOrder, ScoredDataset, ScorerSpec,
};
