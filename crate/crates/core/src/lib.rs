//! Desk-scale pipeline for report generation with composite-reward
//! reinforcement learning.
//!
//! The crate is organized around the stages of the pipeline:
//!
//! - [`corpus`]: study records, report sectioning, filtering, prompt
//!   construction, longitudinal prior linking, and validation splits.
//! - [`metrics`]: scalar report-quality metrics (BLEU-2, soft token F1,
//!   pathology labeling + SembScore, entity-graph F1, linear composite).
//! - [`judge`]: protocol clients for external model services plus a
//!   deterministic in-process mock implementing the same wire protocol.
//! - [`reward`]: composite reward construction and the two-stage schedule.
//! - [`grpo`]: group-relative policy-gradient trainer with clip-higher,
//!   the tabular toy policy, and the synthetic grammar environment.
//! - [`eval`]: end-to-end evaluation harness with stratified reporting.
//! - [`cli`]: command implementations behind the `reportgen` binary.

pub mod cli;
pub mod corpus;
pub mod eval;
pub mod grpo;
pub mod judge;
pub mod metrics;
pub mod reward;
pub mod rng;

pub use corpus::{ImageRef, PromptInstance, ReportSections, StudyRecord, ViewPosition};
pub use metrics::{CompositeCoefficients, MetricVector};
pub use reward::{RewardConfig, RewardStage};
