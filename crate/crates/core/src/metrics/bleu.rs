//! BLEU-2: geometric mean of clipped unigram and bigram precision with a
//! brevity penalty.
//!
//! No smoothing is applied: any zero n-gram precision scores the candidate
//! 0. For an order with no candidate n-grams (candidate shorter than n) the
//! precision is taken as 1 when the reference also has none and 0
//! otherwise, so identical texts always score 1.

use std::collections::HashMap;

use super::text::tokenize;

/// BLEU-2 over pre-tokenized sequences.
pub fn bleu2_tokens(candidate: &[String], reference: &[String]) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    let p1 = clipped_precision(candidate, reference, 1);
    let p2 = clipped_precision(candidate, reference, 2);
    if p1 == 0.0 || p2 == 0.0 {
        return 0.0;
    }
    let bp = brevity_penalty(candidate.len(), reference.len());
    bp * (0.5 * (p1.ln() + p2.ln())).exp()
}

/// BLEU-2 over raw text, using the shared tokenizer.
pub fn bleu2(candidate: &str, reference: &str) -> f64 {
    bleu2_tokens(&tokenize(candidate), &tokenize(reference))
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts: HashMap<&[String], usize> = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

fn clipped_precision(candidate: &[String], reference: &[String], n: usize) -> f64 {
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let total: usize = cand.values().sum();
    if total == 0 {
        // Candidate too short to form any n-gram of this order.
        return if refs.is_empty() { 1.0 } else { 0.0 };
    }
    let matched: usize = cand
        .iter()
        .map(|(gram, &count)| count.min(refs.get(gram).copied().unwrap_or(0)))
        .sum();
    matched as f64 / total as f64
}

fn brevity_penalty(candidate_len: usize, reference_len: usize) -> f64 {
    if candidate_len == 0 {
        return 0.0;
    }
    let ratio = reference_len as f64 / candidate_len as f64;
    (1.0 - ratio).exp().min(1.0)
}
