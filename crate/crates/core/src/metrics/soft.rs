//! Soft token-matching F1: greedy cosine matching between token embeddings
//! of the candidate and reference.

use serde::{Deserialize, Serialize};

use super::text::tokenize;
use super::MetricsError;

/// Embedding provider failure.
#[derive(Debug, thiserror::Error)]
#[error("embedder failure: {0}")]
pub struct EmbedderError(pub String);

/// Maps each token to one vector. Implementations must be deterministic
/// per token string; unit norm is expected but not assumed.
pub trait TokenEmbedder: Send + Sync {
    fn embed(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>, EmbedderError>;
}

/// Precision/recall/F1 from greedy matching, each clamped into [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl SoftScore {
    const ZERO: SoftScore = SoftScore {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn greedy_mean_max(from: &[Vec<f64>], to: &[Vec<f64>]) -> f64 {
    let total: f64 = from
        .iter()
        .map(|f| {
            to.iter()
                .map(|t| cosine(f, t))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum();
    total / from.len() as f64
}

/// Greedy-matching soft F1 between two texts. Precision averages, over
/// candidate tokens, the best cosine against any reference token; recall is
/// symmetric; F1 is their harmonic mean. Either side empty scores all
/// zeros. Embedder failures propagate.
pub fn soft_token_f1(
    candidate: &str,
    reference: &str,
    embedder: &dyn TokenEmbedder,
) -> Result<SoftScore, MetricsError> {
    let cand = tokenize(candidate);
    let refs = tokenize(reference);
    if cand.is_empty() || refs.is_empty() {
        return Ok(SoftScore::ZERO);
    }
    let cand_vecs = embedder.embed(&cand)?;
    let ref_vecs = embedder.embed(&refs)?;
    let precision = greedy_mean_max(&cand_vecs, &ref_vecs).clamp(0.0, 1.0);
    let recall = greedy_mean_max(&ref_vecs, &cand_vecs).clamp(0.0, 1.0);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(SoftScore {
        precision,
        recall,
        f1,
    })
}
