//! Group-relative policy-gradient training on a tabular toy policy.
//!
//! The trainer implements the clip-higher surrogate (asymmetric clipping
//! with a larger upper threshold), group-normalized advantages in place of
//! a value function, and an optional per-token KL penalty toward a frozen
//! reference policy. Gradients with respect to the logits table are
//! analytic, which keeps finite-difference verification exact and removes
//! optimizer-state ambiguity (plain gradient descent, no adaptive
//! optimizer).

pub mod grammar;
pub mod policy;
pub mod trainer;

pub use grammar::{make_grammar_task, GrammarTask, GrammarTaskConfig, LatentFinding};
pub use policy::{PolicyBackend, ToyPolicy};
pub use trainer::{
    grpo_loss, grpo_step, rollout, run_grpo, run_sft, sft_loss, sft_step, CountingPolicy,
    RolloutScorer, ScoredResponse, StepStats, TrainLogRecord,
};

use serde::{Deserialize, Serialize};

/// Errors raised by policy construction and training.
#[derive(Debug, thiserror::Error)]
pub enum GrpoError {
    #[error("rollout group must have at least 2 members, got {size}")]
    GroupTooSmall { size: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("kl_coefficient {kl} > 0 but no reference policy was supplied")]
    MissingReference { kl: f64 },
    #[error("token {token:?} is not in the vocabulary")]
    OutOfVocabulary { token: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("rollout temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("reward scoring failed: {0}")]
    Scorer(String),
    #[error("non-finite loss at update {step}")]
    NonFiniteLoss { step: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

/// How the loss averages over the batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossAggregation {
    /// Mean over all tokens in the batch (the default).
    #[default]
    TokenMean,
    /// Mean over tokens within each response, then mean over responses.
    SequenceMean,
}

/// Trainer hyperparameters. The defaults carry the full-scale contract
/// (learning rate 5e-6, 256 prompts per batch, 16 rollouts per query);
/// desk-scale runs override them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub prompts_per_batch: usize,
    pub group_size: usize,
    pub clip_low: f64,
    pub clip_high: f64,
    pub kl_coefficient: f64,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default = "default_rollout_temperature")]
    pub rollout_temperature: f64,
    #[serde(default)]
    pub loss_aggregation: LossAggregation,
}

fn default_rollout_temperature() -> f64 {
    1.0
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            learning_rate: 5e-6,
            prompts_per_batch: 256,
            group_size: 16,
            clip_low: 0.2,
            clip_high: 0.28,
            kl_coefficient: 0.0,
            epochs: 1,
            seed: 0,
            rollout_temperature: 1.0,
            loss_aggregation: LossAggregation::TokenMean,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        let lr_ok = self.learning_rate.is_finite() && self.learning_rate > 0.0;
        if !lr_ok {
            return Err(GrpoError::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        let clips_ok = self.clip_low > 0.0 && self.clip_high >= self.clip_low;
        if !clips_ok {
            return Err(GrpoError::InvalidConfig(format!(
                "clip thresholds must satisfy high >= low > 0, got low {} high {}",
                self.clip_low, self.clip_high
            )));
        }
        if self.group_size < 2 {
            return Err(GrpoError::GroupTooSmall {
                size: self.group_size,
            });
        }
        let temp_ok = self.rollout_temperature > 0.0;
        if !temp_ok {
            return Err(GrpoError::NonPositiveTemperature(self.rollout_temperature));
        }
        if self.kl_coefficient < 0.0 {
            return Err(GrpoError::InvalidConfig(format!(
                "kl_coefficient must be non-negative, got {}",
                self.kl_coefficient
            )));
        }
        Ok(())
    }
}

/// One query's G sampled responses with the log-probabilities recorded at
/// sampling time and (once scored) the per-response rewards.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub query_id: String,
    /// Context index of the query in the policy's table.
    pub context: usize,
    pub responses: Vec<Vec<usize>>,
    pub old_logprobs: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
}

impl RolloutGroup {
    /// Check the shape invariants; `scored` additionally requires one
    /// reward per response.
    pub fn validate(&self, scored: bool) -> Result<(), GrpoError> {
        if self.responses.len() < 2 {
            return Err(GrpoError::GroupTooSmall {
                size: self.responses.len(),
            });
        }
        if self.old_logprobs.len() != self.responses.len() {
            return Err(GrpoError::ShapeMismatch(format!(
                "{} responses but {} logprob rows",
                self.responses.len(),
                self.old_logprobs.len()
            )));
        }
        for (resp, lps) in self.responses.iter().zip(&self.old_logprobs) {
            if resp.len() != lps.len() {
                return Err(GrpoError::ShapeMismatch(format!(
                    "response of {} tokens with {} logprobs",
                    resp.len(),
                    lps.len()
                )));
            }
        }
        if scored && self.rewards.len() != self.responses.len() {
            return Err(GrpoError::ShapeMismatch(format!(
                "{} responses but {} rewards",
                self.responses.len(),
                self.rewards.len()
            )));
        }
        Ok(())
    }
}

/// Group-normalized advantages: `(r - mean) / std` with the population
/// standard deviation. A degenerate group (all rewards equal, std below
/// 1e-12) yields exactly zero advantages.
pub fn normalize_advantages(rewards: &[f64]) -> Result<Vec<f64>, GrpoError> {
    let g = rewards.len();
    if g < 2 {
        return Err(GrpoError::GroupTooSmall { size: g });
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    let variance = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g as f64;
    let std = variance.sqrt();
    if std < 1e-12 {
        return Ok(vec![0.0; g]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// Clip-higher surrogate: `min(ratio * adv, clip(ratio, 1 - eps_low,
/// 1 + eps_high) * adv)` with asymmetric bounds.
pub fn clipped_surrogate(ratio: f64, advantage: f64, eps_low: f64, eps_high: f64) -> f64 {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - eps_low, 1.0 + eps_high) * advantage;
    unclipped.min(clipped)
}

/// Per-token KL estimator `k3 = exp(d) - d - 1` with
/// `d = logp_ref - logp_new`; non-negative and zero iff the two agree.
pub fn kl_term(logp_new: f64, logp_ref: f64) -> f64 {
    let d = logp_ref - logp_new;
    d.exp() - d - 1.0
}
