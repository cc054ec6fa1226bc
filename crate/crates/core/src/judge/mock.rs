//! Deterministic in-process stand-ins for the remote services.

use std::collections::BTreeSet;
use std::collections::HashMap;

use super::{Generation, JudgeError, JudgeVerdict, ReportJudge, TemporalCategory, TextBackend};
use crate::corpus::PromptInstance;
use crate::metrics::labeler::{affirmed_labels, LabelLexicon};
use crate::metrics::{EmbedderError, TokenEmbedder};
use crate::rng::{fnv1a, splitmix64};

/// Mock judge backed by the rule-based labeler.
///
/// The clinical error count is defined as the size of the symmetric
/// difference between the affirmed pathology-label sets of candidate and
/// reference: deterministic and monotone in factual disagreement. Temporal
/// labels compare the same affirmed sets: equal sets are `NoChange`,
/// additions only are `NewDevelopment`, removals only are `Regression`,
/// and both together are `Progression`.
pub struct MockJudge {
    lexicon: LabelLexicon,
}

impl Default for MockJudge {
    fn default() -> Self {
        MockJudge {
            lexicon: LabelLexicon::default_14(),
        }
    }
}

impl MockJudge {
    pub fn new(lexicon: LabelLexicon) -> Self {
        MockJudge { lexicon }
    }

    fn affirmed(&self, report: &str) -> Result<BTreeSet<String>, JudgeError> {
        affirmed_labels(report, &self.lexicon)
            .map_err(|e| JudgeError::Backend(format!("labeler failure: {e}")))
    }
}

impl ReportJudge for MockJudge {
    fn count_errors(&self, candidate: &str, reference: &str) -> Result<JudgeVerdict, JudgeError> {
        if reference.trim().is_empty() {
            return Err(JudgeError::EmptyReference);
        }
        let cand = self.affirmed(candidate)?;
        let refs = self.affirmed(reference)?;
        let error_count = cand.symmetric_difference(&refs).count() as u32;
        Ok(JudgeVerdict {
            error_count,
            rationale: None,
        })
    }

    fn label_temporal(
        &self,
        current: &str,
        prior: Option<&str>,
    ) -> Result<TemporalCategory, JudgeError> {
        let Some(prior) = prior else {
            return Ok(TemporalCategory::FirstStudy);
        };
        let cur = self.affirmed(current)?;
        let pri = self.affirmed(prior)?;
        let added = cur.difference(&pri).count();
        let removed = pri.difference(&cur).count();
        Ok(match (added > 0, removed > 0) {
            (false, false) => TemporalCategory::NoChange,
            (true, false) => TemporalCategory::NewDevelopment,
            (false, true) => TemporalCategory::Regression,
            (true, true) => TemporalCategory::Progression,
        })
    }
}

/// Mock embedder: a seeded hash of the token expanded to a fixed-dimension
/// vector and normalized. Tokens assigned to the same synonym class share
/// one vector exactly, which makes the embedding deliberately blind to
/// within-class word choice the way a semantic embedder is.
pub struct MockEmbedder {
    dim: usize,
    seed: u64,
    classes: HashMap<String, String>,
}

impl Default for MockEmbedder {
    fn default() -> Self {
        MockEmbedder::new(32, 0x5eed)
    }
}

impl MockEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0);
        MockEmbedder {
            dim,
            seed,
            classes: HashMap::new(),
        }
    }

    /// Map every token of each group to the same embedding.
    pub fn with_synonyms<S: AsRef<str>>(mut self, groups: &[Vec<S>]) -> Self {
        for group in groups {
            if let Some(first) = group.first() {
                for token in group {
                    self.classes
                        .insert(token.as_ref().to_string(), first.as_ref().to_string());
                }
            }
        }
        self
    }

    fn vector(&self, token: &str) -> Vec<f64> {
        let key = self.classes.get(token).map(String::as_str).unwrap_or(token);
        let h = fnv1a(key.as_bytes()) ^ self.seed;
        let mut v: Vec<f64> = (0..self.dim)
            .map(|i| {
                let bits = splitmix64(h.wrapping_add(i as u64 + 1));
                // Map to [-1, 1).
                ((bits >> 11) as f64) * (2.0 / (1u64 << 53) as f64) - 1.0
            })
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            v[0] = 1.0;
        } else {
            for x in &mut v {
                *x /= norm;
            }
        }
        v
    }
}

impl TokenEmbedder for MockEmbedder {
    fn embed(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>, EmbedderError> {
        Ok(tokens.iter().map(|t| self.vector(t)).collect())
    }
}

/// Echo backend: returns the prompt's target, so every downstream
/// similarity metric sees a perfect prediction. Used to test plumbing.
#[derive(Debug, Default, Clone, Copy)]
pub struct MockBackend;

impl MockBackend {
    /// Whitespace-token truncation shared by the mock generation paths.
    pub fn truncate(text: &str, max_tokens: usize) -> Generation {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        if tokens.len() > max_tokens {
            Generation {
                text: tokens[..max_tokens].join(" "),
                truncated: true,
            }
        } else {
            Generation {
                text: text.to_string(),
                truncated: false,
            }
        }
    }
}

impl TextBackend for MockBackend {
    fn generate(
        &self,
        prompt: &PromptInstance,
        _temperature: f64,
        _seed: Option<u64>,
        max_tokens: usize,
    ) -> Result<Generation, JudgeError> {
        Ok(MockBackend::truncate(&prompt.target, max_tokens))
    }
}
