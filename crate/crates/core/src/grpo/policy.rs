//! The tabular autoregressive toy policy.
//!
//! A context-state is a `(query context, position)` pair; each state owns a
//! row of logits over the vocabulary. Generation walks positions left to
//! right and stops at the end-of-sequence token or `max_length`.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::GrpoError;
use crate::judge::{Generation, JudgeError, TextBackend};
use crate::rng::{self, fnv1a};

#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    eos: usize,
    n_contexts: usize,
    max_length: usize,
    logits: Vec<f64>,
}

impl ToyPolicy {
    /// Build a uniform policy. The vocabulary must contain `eos_token` and
    /// no duplicates.
    pub fn new(
        vocab: Vec<String>,
        eos_token: &str,
        n_contexts: usize,
        max_length: usize,
    ) -> Result<Self, GrpoError> {
        if vocab.is_empty() || n_contexts == 0 || max_length == 0 {
            return Err(GrpoError::InvalidConfig(
                "vocabulary, contexts, and max_length must be non-empty".into(),
            ));
        }
        let mut index = HashMap::new();
        for (i, token) in vocab.iter().enumerate() {
            if index.insert(token.clone(), i).is_some() {
                return Err(GrpoError::InvalidConfig(format!(
                    "duplicate vocabulary token {token:?}"
                )));
            }
        }
        let eos = *index
            .get(eos_token)
            .ok_or_else(|| GrpoError::OutOfVocabulary {
                token: eos_token.to_string(),
            })?;
        let logits = vec![0.0; n_contexts * max_length * vocab.len()];
        Ok(ToyPolicy {
            vocab,
            index,
            eos,
            n_contexts,
            max_length,
            logits,
        })
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn eos(&self) -> usize {
        self.eos
    }

    pub fn n_contexts(&self) -> usize {
        self.n_contexts
    }

    pub fn max_length(&self) -> usize {
        self.max_length
    }

    pub fn n_states(&self) -> usize {
        self.n_contexts * self.max_length
    }

    pub fn token_id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Flat state index of `(context, position)`.
    pub fn state(&self, context: usize, position: usize) -> usize {
        debug_assert!(context < self.n_contexts && position < self.max_length);
        context * self.max_length + position
    }

    pub fn logit(&self, state: usize, token: usize) -> f64 {
        self.logits[state * self.vocab.len() + token]
    }

    pub fn set_logit(&mut self, state: usize, token: usize, value: f64) {
        self.logits[state * self.vocab.len() + token] = value;
    }

    pub fn add_logit(&mut self, state: usize, token: usize, delta: f64) {
        self.logits[state * self.vocab.len() + token] += delta;
    }

    pub(crate) fn logits(&self) -> &[f64] {
        &self.logits
    }

    /// Copy of the full logits table, row-major by state.
    pub fn logits_snapshot(&self) -> Vec<f64> {
        self.logits.clone()
    }

    pub(crate) fn apply_gradient(&mut self, gradient: &[f64], learning_rate: f64) {
        debug_assert_eq!(gradient.len(), self.logits.len());
        for (w, g) in self.logits.iter_mut().zip(gradient) {
            *w -= learning_rate * g;
        }
    }

    /// Fill the table with uniform noise in `[-scale, scale]`.
    pub fn randomize(&mut self, scale: f64, rng: &mut rng::Rng) {
        for w in &mut self.logits {
            *w = (rng::uniform(rng) * 2.0 - 1.0) * scale;
        }
    }

    fn row(&self, state: usize) -> &[f64] {
        let v = self.vocab.len();
        &self.logits[state * v..(state + 1) * v]
    }

    /// Log-softmax of a state's row at the given temperature.
    pub fn log_softmax_row(&self, state: usize, temperature: f64) -> Vec<f64> {
        log_softmax_scaled(self.row(state), temperature)
    }

    /// Log-probability of `token` at `(context, position)` under the
    /// policy's own distribution (temperature 1).
    pub fn log_prob(&self, context: usize, position: usize, token: usize) -> f64 {
        self.log_softmax_row(self.state(context, position), 1.0)[token]
    }

    /// Ancestral sample of one sequence; returns the tokens (including the
    /// terminating EOS, if reached) and the per-token log-probabilities
    /// under the tempered sampling distribution.
    pub fn sample(
        &self,
        context: usize,
        temperature: f64,
        rng: &mut rng::Rng,
    ) -> (Vec<usize>, Vec<f64>) {
        let mut tokens = Vec::new();
        let mut logps = Vec::new();
        for position in 0..self.max_length {
            let logp = self.log_softmax_row(self.state(context, position), temperature);
            let u = rng::uniform(rng);
            let mut cum = 0.0;
            let mut choice = logp.len() - 1;
            for (i, lp) in logp.iter().enumerate() {
                cum += lp.exp();
                if u < cum {
                    choice = i;
                    break;
                }
            }
            tokens.push(choice);
            logps.push(logp[choice]);
            if choice == self.eos {
                break;
            }
        }
        (tokens, logps)
    }

    /// Greedy decode: argmax token per position (lowest index wins ties).
    pub fn greedy(&self, context: usize) -> Vec<usize> {
        let mut tokens = Vec::new();
        for position in 0..self.max_length {
            let row = self.row(self.state(context, position));
            let mut best = 0;
            for (i, &w) in row.iter().enumerate() {
                if w > row[best] {
                    best = i;
                }
            }
            tokens.push(best);
            if best == self.eos {
                break;
            }
        }
        tokens
    }

    /// Per-token log-probabilities of an existing sequence at the given
    /// temperature (the offline recomputation used to audit rollouts).
    pub fn sequence_logps(&self, context: usize, tokens: &[usize], temperature: f64) -> Vec<f64> {
        tokens
            .iter()
            .enumerate()
            .map(|(position, &token)| {
                self.log_softmax_row(self.state(context, position), temperature)[token]
            })
            .collect()
    }

    /// Join tokens into text, skipping the EOS marker.
    pub fn detokenize(&self, tokens: &[usize]) -> String {
        tokens
            .iter()
            .filter(|&&t| t != self.eos)
            .map(|&t| self.vocab[t].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Whitespace-tokenize `text` into vocabulary ids, appending EOS.
    pub fn tokenize_with_eos(&self, text: &str) -> Result<Vec<usize>, GrpoError> {
        let mut tokens = Vec::new();
        for word in text.split_whitespace() {
            let id = self
                .token_id(word)
                .ok_or_else(|| GrpoError::OutOfVocabulary {
                    token: word.to_string(),
                })?;
            tokens.push(id);
        }
        tokens.push(self.eos);
        Ok(tokens)
    }

    /// Mean entropy (nats) of the per-state distributions, a coarse
    /// collapse indicator.
    pub fn mean_entropy(&self) -> f64 {
        let mut total = 0.0;
        for state in 0..self.n_states() {
            let logp = self.log_softmax_row(state, 1.0);
            total -= logp.iter().map(|lp| lp.exp() * lp).sum::<f64>();
        }
        total / self.n_states() as f64
    }
}

fn log_softmax_scaled(row: &[f64], temperature: f64) -> Vec<f64> {
    debug_assert!(temperature > 0.0);
    let scaled: Vec<f64> = row.iter().map(|w| w / temperature).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scaled.iter().map(|w| (w - max).exp()).sum::<f64>().ln();
    scaled.iter().map(|w| w - lse).collect()
}

/// On-disk checkpoint: vocabulary, logits table, config hash, and step
/// counter. Loading validates the stored hash against the stored config.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub vocabulary: Vec<String>,
    pub eos_token: String,
    pub n_contexts: usize,
    pub max_length: usize,
    pub logits: Vec<f64>,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub step: u64,
}

pub fn config_hash(config: &serde_json::Value) -> String {
    format!("{:016x}", fnv1a(config.to_string().as_bytes()))
}

impl ToyPolicy {
    pub fn to_checkpoint(&self, config: serde_json::Value, step: u64) -> Checkpoint {
        Checkpoint {
            vocabulary: self.vocab.clone(),
            eos_token: self.vocab[self.eos].clone(),
            n_contexts: self.n_contexts,
            max_length: self.max_length,
            logits: self.logits.clone(),
            config_hash: config_hash(&config),
            config,
            step,
        }
    }

    pub fn from_checkpoint(checkpoint: &Checkpoint) -> Result<ToyPolicy, GrpoError> {
        let expected = config_hash(&checkpoint.config);
        if expected != checkpoint.config_hash {
            return Err(GrpoError::Checkpoint(format!(
                "config hash mismatch: stored {} but config hashes to {}",
                checkpoint.config_hash, expected
            )));
        }
        let mut policy = ToyPolicy::new(
            checkpoint.vocabulary.clone(),
            &checkpoint.eos_token,
            checkpoint.n_contexts,
            checkpoint.max_length,
        )?;
        if checkpoint.logits.len() != policy.logits.len() {
            return Err(GrpoError::Checkpoint(format!(
                "logits table has {} entries, expected {}",
                checkpoint.logits.len(),
                policy.logits.len()
            )));
        }
        policy.logits = checkpoint.logits.clone();
        Ok(policy)
    }
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, mut writer: W) -> Result<(), GrpoError> {
        let json = serde_json::to_string(self).map_err(|e| GrpoError::Checkpoint(e.to_string()))?;
        writer
            .write_all(json.as_bytes())
            .map_err(|e| GrpoError::Checkpoint(e.to_string()))
    }

    pub fn read_from<R: Read>(mut reader: R) -> Result<Checkpoint, GrpoError> {
        let mut text = String::new();
        reader
            .read_to_string(&mut text)
            .map_err(|e| GrpoError::Checkpoint(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| GrpoError::Checkpoint(e.to_string()))
    }
}

/// Generation backend view of a toy policy: prompts are routed to a
/// context by hashing the prompt text, temperature 0 decodes greedily, and
/// positive temperatures require a seed.
pub struct PolicyBackend {
    policy: ToyPolicy,
}

impl PolicyBackend {
    pub fn new(policy: ToyPolicy) -> Self {
        PolicyBackend { policy }
    }

    pub fn context_for(&self, prompt_text: &str) -> usize {
        (fnv1a(prompt_text.as_bytes()) % self.policy.n_contexts as u64) as usize
    }
}

impl TextBackend for PolicyBackend {
    fn generate(
        &self,
        prompt: &crate::corpus::PromptInstance,
        temperature: f64,
        seed: Option<u64>,
        max_tokens: usize,
    ) -> Result<Generation, JudgeError> {
        let context = self.context_for(&prompt.text);
        let tokens = if temperature == 0.0 {
            self.policy.greedy(context)
        } else {
            let seed = seed.ok_or(JudgeError::MissingSeed { temperature })?;
            let mut rng = rng::seeded(seed);
            self.policy.sample(context, temperature, &mut rng).0
        };
        let text = self.policy.detokenize(&tokens);
        let words: Vec<&str> = text.split_whitespace().collect();
        if words.len() > max_tokens {
            Ok(Generation {
                text: words[..max_tokens].join(" "),
                truncated: true,
            })
        } else {
            Ok(Generation {
                text,
                truncated: false,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn policy() -> ToyPolicy {
        let vocab: Vec<String> = ["alpha", "beta", "gamma", "</s>"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        ToyPolicy::new(vocab, "</s>", 2, 3).unwrap()
    }

    #[test]
    fn uniform_rows_sum_to_one() {
        let p = policy();
        let logp = p.log_softmax_row(0, 1.0);
        let total: f64 = logp.iter().map(|lp| lp.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!((logp[0] - (1.0f64 / 4.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn eos_must_be_in_vocab() {
        let vocab = vec!["a".to_string()];
        assert!(matches!(
            ToyPolicy::new(vocab, "</s>", 1, 1),
            Err(GrpoError::OutOfVocabulary { .. })
        ));
    }

    #[test]
    fn duplicate_vocab_rejected() {
        let vocab = vec!["a".to_string(), "a".to_string()];
        assert!(ToyPolicy::new(vocab, "a", 1, 1).is_err());
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let mut p = policy();
        let mut init_rng = rng::seeded(1);
        p.randomize(1.0, &mut init_rng);
        let a = p.sample(0, 1.0, &mut rng::seeded(99));
        let b = p.sample(0, 1.0, &mut rng::seeded(99));
        assert_eq!(a, b);
    }

    #[test]
    fn sequences_stop_at_eos_or_max_length() {
        let mut p = policy();
        // Force eos at position 0 of context 1.
        p.set_logit(p.state(1, 0), 3, 50.0);
        let g = p.greedy(1);
        assert_eq!(g, vec![3]);
        // Without eos pressure, greedy runs to max_length.
        let g = p.greedy(0);
        assert_eq!(g.len(), 3);
    }

    #[test]
    fn near_zero_temperature_sampling_matches_greedy() {
        let mut p = policy();
        let mut init_rng = rng::seeded(5);
        p.randomize(1.5, &mut init_rng);
        let greedy = p.greedy(0);
        for seed in 0..16 {
            let (tokens, _) = p.sample(0, 1e-6, &mut rng::seeded(seed));
            assert_eq!(tokens, greedy);
        }
    }

    #[test]
    fn sampled_logps_match_offline_recomputation() {
        let mut p = policy();
        let mut init_rng = rng::seeded(9);
        p.randomize(1.0, &mut init_rng);
        for temperature in [0.7, 1.0, 1.3] {
            let (tokens, logps) = p.sample(1, temperature, &mut rng::seeded(4));
            let recomputed = p.sequence_logps(1, &tokens, temperature);
            assert_eq!(logps.len(), recomputed.len());
            for (a, b) in logps.iter().zip(&recomputed) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn detokenize_skips_eos() {
        let p = policy();
        assert_eq!(p.detokenize(&[0, 1, 3]), "alpha beta");
    }

    #[test]
    fn tokenize_with_eos_round_trips() {
        let p = policy();
        let ids = p.tokenize_with_eos("alpha gamma").unwrap();
        assert_eq!(ids, vec![0, 2, 3]);
        assert!(matches!(
            p.tokenize_with_eos("alpha delta"),
            Err(GrpoError::OutOfVocabulary { .. })
        ));
    }

    #[test]
    fn checkpoint_round_trip_validates_hash() {
        let mut p = policy();
        let mut init_rng = rng::seeded(2);
        p.randomize(0.5, &mut init_rng);
        let config = serde_json::json!({"learning_rate": 0.1});
        let ckpt = p.to_checkpoint(config, 42);
        let mut buffer = Vec::new();
        ckpt.write_to(&mut buffer).unwrap();
        let reread = Checkpoint::read_from(buffer.as_slice()).unwrap();
        assert_eq!(reread.step, 42);
        let restored = ToyPolicy::from_checkpoint(&reread).unwrap();
        assert_eq!(restored, p);

        let mut tampered = Checkpoint::read_from(buffer.as_slice()).unwrap();
        tampered.config = serde_json::json!({"learning_rate": 0.2});
        assert!(matches!(
            ToyPolicy::from_checkpoint(&tampered),
            Err(GrpoError::Checkpoint(_))
        ));
    }

    #[test]
    fn backend_greedy_is_deterministic_and_seed_gated() {
        let mut p = policy();
        let mut init_rng = rng::seeded(8);
        p.randomize(1.0, &mut init_rng);
        let backend = PolicyBackend::new(p);
        let prompt = crate::corpus::PromptInstance {
            task_kind: crate::corpus::TaskKind::FindingsOnly,
            context: String::new(),
            current_images: vec![],
            prior: None,
            target: String::new(),
            text: "some prompt".to_string(),
        };
        let a = backend.generate(&prompt, 0.0, None, 16).unwrap();
        let b = backend.generate(&prompt, 0.0, None, 16).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            backend.generate(&prompt, 1.0, None, 16),
            Err(JudgeError::MissingSeed { .. })
        ));
        let c = backend.generate(&prompt, 1.0, Some(7), 16).unwrap();
        let d = backend.generate(&prompt, 1.0, Some(7), 16).unwrap();
        assert_eq!(c, d);
    }
}
