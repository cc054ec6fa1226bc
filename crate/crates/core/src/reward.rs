//! Composite reward construction for the RL stages.
//!
//! Stage 1 optimizes the weighted metric composite alone; stage 2 keeps the
//! stage-1 weights and adds the judge term `judge_weight / (errors + 1)`
//! plus KL regularization toward the frozen stage-1 policy. The KL
//! coefficient lives here for configuration but enters the trainer loss,
//! not this scalar.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::judge::{JudgeError, JudgeVerdict, ReportJudge, TemporalCategory};
use crate::metrics::MetricVector;
use crate::rng::fnv1a;

/// Errors raised by reward evaluation.
#[derive(Debug, thiserror::Error)]
pub enum RewardError {
    #[error("judge_weight is {judge_weight} but the metric vector has no judge_errors")]
    MissingJudgeErrors { judge_weight: f64 },
}

/// Optimization stage selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardStage {
    Stage1,
    Stage2,
}

/// Per-metric weights of the composite reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricWeights {
    pub bleu2: f64,
    pub soft_f1: f64,
    pub semb: f64,
    pub radgraph_f1: f64,
}

impl MetricWeights {
    /// The stage-1 composite weights.
    pub fn stage1() -> Self {
        MetricWeights {
            bleu2: 0.0,
            soft_f1: 0.370,
            semb: 0.253,
            radgraph_f1: 0.377,
        }
    }
}

/// Reward configuration; encodes the stage-1/stage-2 schedules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub metric_weights: MetricWeights,
    pub judge_weight: f64,
    pub kl_coefficient: f64,
    pub stage: RewardStage,
}

impl RewardConfig {
    /// Stage defaults. Callers may override any field afterwards.
    pub fn schedule(stage: RewardStage) -> Self {
        match stage {
            RewardStage::Stage1 => RewardConfig {
                metric_weights: MetricWeights::stage1(),
                judge_weight: 0.0,
                kl_coefficient: 0.0,
                stage,
            },
            RewardStage::Stage2 => RewardConfig {
                metric_weights: MetricWeights::stage1(),
                judge_weight: 0.5,
                kl_coefficient: 0.03,
                stage,
            },
        }
    }

    /// Whether scoring under this config requires an error-counting judge.
    pub fn needs_judge(&self) -> bool {
        self.judge_weight != 0.0
    }
}

/// Parse a reward config file: either a bare stage selector or a full
/// config. A `"stage"` field selects defaults; explicit fields override.
#[derive(Debug, Deserialize)]
struct RewardConfigFile {
    stage: RewardStage,
    #[serde(default)]
    metric_weights: Option<MetricWeights>,
    #[serde(default)]
    judge_weight: Option<f64>,
    #[serde(default)]
    kl_coefficient: Option<f64>,
}

impl RewardConfig {
    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        let file: RewardConfigFile = serde_json::from_str(json)?;
        let mut config = RewardConfig::schedule(file.stage);
        if let Some(w) = file.metric_weights {
            config.metric_weights = w;
        }
        if let Some(w) = file.judge_weight {
            config.judge_weight = w;
        }
        if let Some(k) = file.kl_coefficient {
            config.kl_coefficient = k;
        }
        Ok(config)
    }
}

/// The error-count transform: `1 / (error_count + 1)`, strictly decreasing
/// and bounded in (0, 1].
pub fn judge_reward(error_count: u32) -> f64 {
    1.0 / (f64::from(error_count) + 1.0)
}

/// Scalar reward of one response against its reference. KL is not part of
/// this value; the trainer applies it separately.
pub fn total_reward(mv: &MetricVector, config: &RewardConfig) -> Result<f64, RewardError> {
    let w = &config.metric_weights;
    let mut reward = w.bleu2 * mv.bleu2
        + w.soft_f1 * mv.soft_f1
        + w.semb * mv.semb
        + w.radgraph_f1 * mv.radgraph_f1;
    if config.judge_weight != 0.0 {
        let errors = mv.judge_errors.ok_or(RewardError::MissingJudgeErrors {
            judge_weight: config.judge_weight,
        })?;
        reward += config.judge_weight * judge_reward(errors);
    }
    Ok(reward)
}

/// Caches judge verdicts by `(candidate, reference)` content hash. The
/// judge is the expensive component and is treated as a pure function per
/// configuration, so a concurrent last-write-wins map of idempotent values
/// is safe.
pub struct CachedJudge<J> {
    inner: J,
    errors: Mutex<HashMap<u64, JudgeVerdict>>,
}

impl<J: ReportJudge> CachedJudge<J> {
    pub fn new(inner: J) -> Self {
        CachedJudge {
            inner,
            errors: Mutex::new(HashMap::new()),
        }
    }

    pub fn cached_entries(&self) -> usize {
        self.errors.lock().unwrap().len()
    }

    pub fn inner(&self) -> &J {
        &self.inner
    }

    fn key(candidate: &str, reference: &str) -> u64 {
        let mut bytes = Vec::with_capacity(candidate.len() + reference.len() + 1);
        bytes.extend_from_slice(candidate.as_bytes());
        bytes.push(0x1f);
        bytes.extend_from_slice(reference.as_bytes());
        fnv1a(&bytes)
    }
}

impl<J: ReportJudge> ReportJudge for CachedJudge<J> {
    fn count_errors(&self, candidate: &str, reference: &str) -> Result<JudgeVerdict, JudgeError> {
        let key = Self::key(candidate, reference);
        if let Some(hit) = self.errors.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let verdict = self.inner.count_errors(candidate, reference)?;
        self.errors.lock().unwrap().insert(key, verdict.clone());
        Ok(verdict)
    }

    fn label_temporal(
        &self,
        current: &str,
        prior: Option<&str>,
    ) -> Result<TemporalCategory, JudgeError> {
        self.inner.label_temporal(current, prior)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn judge_reward_formula() {
        assert_eq!(judge_reward(0), 1.0);
        assert_eq!(judge_reward(1), 0.5);
        assert_eq!(judge_reward(3), 0.25);
    }

    #[test]
    fn judge_reward_is_strictly_decreasing_and_bounded() {
        let mut prev = f64::INFINITY;
        for e in 0..200 {
            let r = judge_reward(e);
            assert!(r > 0.0 && r <= 1.0);
            assert!(r < prev);
            prev = r;
        }
    }

    #[test]
    fn stage_schedules_match_contract() {
        let s1 = RewardConfig::schedule(RewardStage::Stage1);
        assert_eq!(s1.metric_weights.bleu2, 0.0);
        assert_eq!(s1.metric_weights.soft_f1, 0.370);
        assert_eq!(s1.metric_weights.semb, 0.253);
        assert_eq!(s1.metric_weights.radgraph_f1, 0.377);
        assert_eq!(s1.judge_weight, 0.0);
        assert_eq!(s1.kl_coefficient, 0.0);

        let s2 = RewardConfig::schedule(RewardStage::Stage2);
        assert_eq!(s2.metric_weights, s1.metric_weights);
        assert_eq!(s2.judge_weight, 0.5);
        assert_eq!(s2.kl_coefficient, 0.03);
    }

    #[test]
    fn stage1_total_matches_manual_weighted_sum() {
        let mv = MetricVector::new(0.9, 0.8, 0.7, 0.6);
        let got = total_reward(&mv, &RewardConfig::schedule(RewardStage::Stage1)).unwrap();
        assert!((got - 0.6993).abs() < 1e-12);
    }

    #[test]
    fn stage2_total_adds_judge_term() {
        let mv = MetricVector::new(0.9, 0.8, 0.7, 0.6).with_judge_errors(1);
        let got = total_reward(&mv, &RewardConfig::schedule(RewardStage::Stage2)).unwrap();
        assert!((got - 0.9493).abs() < 1e-12);
    }

    #[test]
    fn all_zero_metrics_score_zero() {
        let mv = MetricVector::new(0.0, 0.0, 0.0, 0.0);
        let got = total_reward(&mv, &RewardConfig::schedule(RewardStage::Stage1)).unwrap();
        assert_eq!(got, 0.0);
    }

    #[test]
    fn missing_judge_errors_is_an_error_in_stage2() {
        let mv = MetricVector::new(0.9, 0.8, 0.7, 0.6);
        assert!(matches!(
            total_reward(&mv, &RewardConfig::schedule(RewardStage::Stage2)),
            Err(RewardError::MissingJudgeErrors { .. })
        ));
    }

    #[test]
    fn stage1_reward_ignores_bleu_exactly() {
        let config = RewardConfig::schedule(RewardStage::Stage1);
        let a = MetricVector::new(0.0, 0.8, 0.7, 0.6);
        let b = MetricVector::new(1.0, 0.8, 0.7, 0.6);
        let ra = total_reward(&a, &config).unwrap();
        let rb = total_reward(&b, &config).unwrap();
        assert_eq!(ra.to_bits(), rb.to_bits());
    }

    #[test]
    fn reward_is_monotone_in_nonnegative_weights() {
        let config = RewardConfig::schedule(RewardStage::Stage1);
        let base = MetricVector::new(0.5, 0.5, 0.5, 0.5);
        let bumped = MetricVector::new(0.5, 0.6, 0.5, 0.5);
        assert!(total_reward(&bumped, &config).unwrap() >= total_reward(&base, &config).unwrap());
    }

    #[test]
    fn cached_judge_calls_the_inner_judge_once_per_pair() {
        use std::sync::atomic::{AtomicUsize, Ordering};

        struct Counting(AtomicUsize);
        impl ReportJudge for Counting {
            fn count_errors(
                &self,
                candidate: &str,
                _reference: &str,
            ) -> Result<JudgeVerdict, JudgeError> {
                self.0.fetch_add(1, Ordering::SeqCst);
                Ok(JudgeVerdict {
                    error_count: candidate.len() as u32,
                    rationale: None,
                })
            }
            fn label_temporal(
                &self,
                _current: &str,
                _prior: Option<&str>,
            ) -> Result<TemporalCategory, JudgeError> {
                Ok(TemporalCategory::NoChange)
            }
        }

        let judge = CachedJudge::new(Counting(AtomicUsize::new(0)));
        for _ in 0..5 {
            assert_eq!(judge.count_errors("abc", "ref").unwrap().error_count, 3);
        }
        assert_eq!(judge.inner().0.load(Ordering::SeqCst), 1);
        assert_eq!(judge.cached_entries(), 1);
        // A different pair is a fresh call.
        judge.count_errors("abcd", "ref").unwrap();
        assert_eq!(judge.inner().0.load(Ordering::SeqCst), 2);
        assert_eq!(judge.cached_entries(), 2);
    }

    #[test]
    fn config_file_selects_stage_defaults_and_overrides() {
        let config = RewardConfig::from_json(r#"{"stage":"stage2"}"#).unwrap();
        assert_eq!(config.judge_weight, 0.5);
        let config = RewardConfig::from_json(
            r#"{"stage":"stage2","judge_weight":0.25,"kl_coefficient":0.1}"#,
        )
        .unwrap();
        assert_eq!(config.judge_weight, 0.25);
        assert_eq!(config.kl_coefficient, 0.1);
        assert_eq!(config.metric_weights, MetricWeights::stage1());
    }
}
