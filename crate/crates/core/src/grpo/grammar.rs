//! Synthetic report-grammar environment.
//!
//! Each query carries a latent finding realized by the template grammar
//! `<negation?> <pathology> <location>`. The reference report is the
//! grammar realization of the latent finding, rewards come from the same
//! metric stack as the full pipeline (scored against the reference), and
//! the per-prompt reward ceiling is computed by exhaustively enumerating
//! every grammar-valid output.
//!
//! The embedder, metric lexicon, and judge lexicon are each configurable:
//! a synonym group makes the embedder blind to word choice inside the
//! group, and a judge lexicon broader than the metric lexicon reproduces
//! the situation where the error-counting judge detects mistakes the
//! similarity metrics cannot see.

use serde::{Deserialize, Serialize};

use super::policy::ToyPolicy;
use super::trainer::{RolloutScorer, ScoredResponse};
use super::GrpoError;
use crate::judge::{MockEmbedder, MockJudge, ReportJudge};
use crate::metrics::labeler::{label_pathologies, LabelLexicon, LabelPatterns};
use crate::metrics::{bleu2, extract_entities, radgraph_f1, semb_score, soft_token_f1, PatternSet};
use crate::reward::CachedJudge;
use crate::reward::{total_reward, RewardConfig, RewardStage};
use crate::rng;

pub const EOS_TOKEN: &str = "</s>";

/// Latent content of one query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentFinding {
    pub present: bool,
    pub pathology: String,
    pub location: String,
}

impl LatentFinding {
    /// Grammar realization: `<negation?> <pathology> <location>`.
    pub fn realize(&self) -> String {
        if self.present {
            format!("{} {}", self.pathology, self.location)
        } else {
            format!("no {} {}", self.pathology, self.location)
        }
    }
}

/// Environment parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrammarTaskConfig {
    pub n_prompts: usize,
    pub pathologies: Vec<String>,
    pub locations: Vec<String>,
    /// Probability that the latent finding is negated.
    pub negation_prob: f64,
    /// Embedder synonym groups: tokens inside one group share a vector.
    pub synonym_groups: Vec<Vec<String>>,
    /// Pathologies visible to the metric-side labeler and extractor.
    /// `None` means all.
    pub metric_pathologies: Option<Vec<String>>,
    /// Pathologies visible to the mock judge. `None` means all.
    pub judge_pathologies: Option<Vec<String>>,
    /// Count judge errors for logging even when the reward gives them zero
    /// weight (the error-awareness ablation needs the series).
    pub track_judge_errors: bool,
    /// Fraction of prompts whose SFT targets are majority-hedged: the
    /// style mode flips the negation, so the cross-entropy optimum sits
    /// below the reward optimum on those prompts and the RL stage has
    /// something real to fix.
    pub sft_style_noise: f64,
    pub reward: RewardConfig,
    pub embed_dim: usize,
}

impl Default for GrammarTaskConfig {
    fn default() -> Self {
        GrammarTaskConfig {
            n_prompts: 8,
            pathologies: ["effusion", "edema", "pneumonia", "opacity"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            locations: ["left", "right"].iter().map(|s| s.to_string()).collect(),
            negation_prob: 1.0 / 3.0,
            synonym_groups: Vec::new(),
            metric_pathologies: None,
            judge_pathologies: None,
            track_judge_errors: false,
            sft_style_noise: 0.25,
            reward: RewardConfig::schedule(RewardStage::Stage1),
            embed_dim: 16,
        }
    }
}

fn pathology_lexicon(pathologies: &[String]) -> LabelLexicon {
    let entries = pathologies
        .iter()
        .map(|p| {
            (
                p.clone(),
                LabelPatterns {
                    triggers: vec![p.clone()],
                    negators: vec!["no".to_string()],
                },
            )
        })
        .collect();
    LabelLexicon::new(entries, 3)
}

/// The environment: prompts, references, scoring stack, and oracle.
pub struct GrammarTask {
    pub vocab: Vec<String>,
    pub max_length: usize,
    pub prompts: Vec<LatentFinding>,
    pub references: Vec<String>,
    pub reward_config: RewardConfig,
    /// Per-prompt reward of the best grammar-valid output under
    /// `reward_config`, from exhaustive enumeration.
    pub oracle_max: Vec<f64>,
    /// Prompts whose SFT targets are majority-hedged.
    pub style_flipped: Vec<bool>,
    config: GrammarTaskConfig,
    metric_lexicon: LabelLexicon,
    patterns: PatternSet,
    embedder: MockEmbedder,
    // The judge is the expensive component at full scale; responses repeat
    // heavily across rollouts, so verdicts are cached by content hash.
    judge: Option<CachedJudge<MockJudge>>,
}

/// Build the seeded environment. The same seed yields the identical task.
pub fn make_grammar_task(seed: u64, config: GrammarTaskConfig) -> Result<GrammarTask, GrpoError> {
    if config.n_prompts == 0 || config.pathologies.is_empty() || config.locations.is_empty() {
        return Err(GrpoError::InvalidConfig(
            "grammar task needs prompts, pathologies, and locations".into(),
        ));
    }
    let mut vocab: Vec<String> = vec!["no".to_string()];
    vocab.extend(config.pathologies.iter().cloned());
    vocab.extend(config.locations.iter().cloned());
    vocab.push(EOS_TOKEN.to_string());
    if vocab.len() > 30 {
        return Err(GrpoError::InvalidConfig(format!(
            "grammar vocabulary has {} tokens, limit is 30",
            vocab.len()
        )));
    }

    let mut rng = rng::seeded(seed);
    let prompts: Vec<LatentFinding> = (0..config.n_prompts)
        .map(|_| {
            let present = rng::uniform(&mut rng) >= config.negation_prob;
            let pathology =
                config.pathologies[rng::index(&mut rng, config.pathologies.len())].clone();
            let location = config.locations[rng::index(&mut rng, config.locations.len())].clone();
            LatentFinding {
                present,
                pathology,
                location,
            }
        })
        .collect();
    let references: Vec<String> = prompts.iter().map(LatentFinding::realize).collect();
    let style_flipped: Vec<bool> = (0..config.n_prompts)
        .map(|_| rng::uniform(&mut rng) < config.sft_style_noise)
        .collect();

    let metric_pathologies = config
        .metric_pathologies
        .clone()
        .unwrap_or_else(|| config.pathologies.clone());
    let judge_pathologies = config
        .judge_pathologies
        .clone()
        .unwrap_or_else(|| config.pathologies.clone());
    let metric_lexicon = pathology_lexicon(&metric_pathologies);
    let patterns = PatternSet {
        observations: metric_pathologies.clone(),
        anatomy: config.locations.clone(),
        negators: vec!["no".to_string()],
        uncertainty: Vec::new(),
        negation_window: 3,
    };
    let embedder =
        MockEmbedder::new(config.embed_dim, 0x64a7).with_synonyms(&config.synonym_groups);
    let judge = if config.reward.needs_judge() || config.track_judge_errors {
        Some(CachedJudge::new(MockJudge::new(pathology_lexicon(
            &judge_pathologies,
        ))))
    } else {
        None
    };

    let mut task = GrammarTask {
        vocab,
        max_length: 4,
        prompts,
        references,
        reward_config: config.reward,
        oracle_max: Vec::new(),
        style_flipped,
        config,
        metric_lexicon,
        patterns,
        embedder,
        judge,
    };
    task.oracle_max = task.oracle_max_rewards(&task.reward_config)?;
    Ok(task)
}

impl GrammarTask {
    /// All grammar-valid realizations: `[no?] <pathology> <location>`.
    pub fn enumerate_valid_outputs(&self) -> Vec<String> {
        let mut outputs = Vec::new();
        for present in [true, false] {
            for pathology in &self.config.pathologies {
                for location in &self.config.locations {
                    outputs.push(
                        LatentFinding {
                            present,
                            pathology: pathology.clone(),
                            location: location.clone(),
                        }
                        .realize(),
                    );
                }
            }
        }
        outputs
    }

    /// Score one candidate against a prompt's reference under a given
    /// reward configuration.
    pub fn score_with(
        &self,
        context: usize,
        candidate: &str,
        reward_config: &RewardConfig,
    ) -> Result<ScoredResponse, GrpoError> {
        let reference = self
            .references
            .get(context)
            .ok_or_else(|| GrpoError::Scorer(format!("no prompt {context}")))?;
        let soft = soft_token_f1(candidate, reference, &self.embedder)
            .map_err(|e| GrpoError::Scorer(e.to_string()))?;
        let cand_labels = label_pathologies(candidate, &self.metric_lexicon)
            .map_err(|e| GrpoError::Scorer(e.to_string()))?;
        let ref_labels = label_pathologies(reference, &self.metric_lexicon)
            .map_err(|e| GrpoError::Scorer(e.to_string()))?;
        let semb =
            semb_score(&cand_labels, &ref_labels).map_err(|e| GrpoError::Scorer(e.to_string()))?;
        let cand_graph = extract_entities(candidate, &self.patterns);
        let ref_graph = extract_entities(reference, &self.patterns);
        let mut mv = crate::metrics::MetricVector::new(
            bleu2(candidate, reference),
            soft.f1,
            semb,
            radgraph_f1(&cand_graph, &ref_graph),
        );
        match (&self.judge, reward_config.needs_judge()) {
            (Some(judge), _) => {
                let verdict = judge
                    .count_errors(candidate, reference)
                    .map_err(|e| GrpoError::Scorer(e.to_string()))?;
                mv = mv.with_judge_errors(verdict.error_count);
            }
            (None, true) => {
                return Err(GrpoError::Scorer(
                    "reward needs a judge but none configured".into(),
                ))
            }
            (None, false) => {}
        }
        let reward =
            total_reward(&mv, reward_config).map_err(|e| GrpoError::Scorer(e.to_string()))?;
        Ok(ScoredResponse {
            reward,
            judge_errors: mv.judge_errors,
        })
    }

    /// Exhaustive per-prompt maxima over all grammar-valid outputs.
    pub fn oracle_max_rewards(&self, reward_config: &RewardConfig) -> Result<Vec<f64>, GrpoError> {
        let outputs = self.enumerate_valid_outputs();
        let mut maxima = Vec::with_capacity(self.prompts.len());
        for context in 0..self.prompts.len() {
            let mut best = f64::NEG_INFINITY;
            for output in &outputs {
                best = best.max(self.score_with(context, output, reward_config)?.reward);
            }
            maxima.push(best);
        }
        Ok(maxima)
    }

    /// Fresh uniform policy shaped for this task.
    pub fn build_policy(&self) -> Result<ToyPolicy, GrpoError> {
        ToyPolicy::new(
            self.vocab.clone(),
            EOS_TOKEN,
            self.prompts.len(),
            self.max_length,
        )
    }

    /// `(context, target tokens)` SFT pairs. Style-flipped prompts emit a
    /// 3:2 mixture of the hedged realization (negation flipped) and the
    /// true one, so cross-entropy training lands on the hedged mode there.
    pub fn sft_pairs(&self, policy: &ToyPolicy) -> Result<Vec<(usize, Vec<usize>)>, GrpoError> {
        let mut pairs = Vec::new();
        for (context, prompt) in self.prompts.iter().enumerate() {
            let truth = policy.tokenize_with_eos(&self.references[context])?;
            if self.style_flipped[context] {
                let hedged = LatentFinding {
                    present: !prompt.present,
                    ..prompt.clone()
                };
                let hedged = policy.tokenize_with_eos(&hedged.realize())?;
                for _ in 0..3 {
                    pairs.push((context, hedged.clone()));
                }
                for _ in 0..2 {
                    pairs.push((context, truth.clone()));
                }
            } else {
                pairs.push((context, truth));
            }
        }
        Ok(pairs)
    }

    pub fn contexts(&self) -> Vec<usize> {
        (0..self.prompts.len()).collect()
    }

    /// The judge used for scoring, when the reward schedule needs one.
    pub fn judge(&self) -> Option<&CachedJudge<MockJudge>> {
        self.judge.as_ref()
    }
}

impl RolloutScorer for GrammarTask {
    fn score(&self, context: usize, candidate: &str) -> Result<ScoredResponse, GrpoError> {
        self.score_with(context, candidate, &self.reward_config)
    }
}
