//! Scalar report-quality metrics.
//!
//! Every metric here is pure and deterministic. The neural scorers used by
//! the full-scale pipeline (a BERT-style embedder, a pathology labeler, an
//! entity-relation extractor) are replaced by rule-based stand-ins behind
//! the same interfaces; each is pluggable with a remote client from
//! [`crate::judge`].

pub mod bleu;
pub mod entities;
pub mod labeler;
pub mod soft;
pub mod text;

pub use bleu::bleu2;
pub use entities::{
    extract_entities, radgraph_f1, Entity, EntityGraph, EntityType, PatternSet, Polarity, Relation,
    RelationType,
};
pub use labeler::{label_pathologies, semb_score, LabelLexicon, PathologyLabels};
pub use soft::{soft_token_f1, EmbedderError, SoftScore, TokenEmbedder};
pub use text::{sentences, tokenize};

use serde::{Deserialize, Serialize};

/// Errors raised by metric computation.
#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("indicator vectors have different lengths: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("label lexicon is empty")]
    EmptyLexicon,
    #[error("all composite weights are zero")]
    DegenerateCoefficients,
    #[error("reciprocal of non-positive composite {raw}")]
    NonPositiveComposite { raw: f64 },
    #[error(transparent)]
    Embedder(#[from] EmbedderError),
}

/// Per-report scores. `judge_errors` is present only when an error-counting
/// judge was consulted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricVector {
    pub bleu2: f64,
    pub soft_f1: f64,
    pub semb: f64,
    pub radgraph_f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_errors: Option<u32>,
}

impl MetricVector {
    pub fn new(bleu2: f64, soft_f1: f64, semb: f64, radgraph_f1: f64) -> Self {
        MetricVector {
            bleu2,
            soft_f1,
            semb,
            radgraph_f1,
            judge_errors: None,
        }
    }

    pub fn with_judge_errors(mut self, errors: u32) -> Self {
        self.judge_errors = Some(errors);
        self
    }

    /// Range check for the stated invariants.
    pub fn in_range(&self) -> bool {
        (0.0..=1.0).contains(&self.bleu2)
            && (0.0..=1.0).contains(&self.soft_f1)
            && (-1.0..=1.0).contains(&self.semb)
            && (0.0..=1.0).contains(&self.radgraph_f1)
    }
}

/// Linear combination defining the composite report-quality score. The
/// defaults are the stage-1 reward weights with a zero intercept; exact
/// leaderboard-equivalent scoring requires externally supplied coefficients
/// (see the coefficients JSON in the repository docs).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositeCoefficients {
    pub w_bleu: f64,
    pub w_soft: f64,
    pub w_semb: f64,
    pub w_radgraph: f64,
    #[serde(default)]
    pub intercept: f64,
    #[serde(default)]
    pub reciprocal: bool,
}

impl Default for CompositeCoefficients {
    fn default() -> Self {
        CompositeCoefficients {
            w_bleu: 0.0,
            w_soft: 0.370,
            w_semb: 0.253,
            w_radgraph: 0.377,
            intercept: 0.0,
            reciprocal: false,
        }
    }
}

impl CompositeCoefficients {
    pub fn with_reciprocal(mut self, reciprocal: bool) -> Self {
        self.reciprocal = reciprocal;
        self
    }

    fn has_nonzero_weight(&self) -> bool {
        self.w_bleu != 0.0 || self.w_soft != 0.0 || self.w_semb != 0.0 || self.w_radgraph != 0.0
    }
}

/// Raw weighted sum plus the reported value (its reciprocal when the
/// coefficients ask for reciprocal reporting).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositeScore {
    pub raw: f64,
    pub reported: f64,
}

/// Evaluate the composite. Under reciprocal reporting a non-positive raw
/// composite is an error.
pub fn composite(
    mv: &MetricVector,
    coeffs: &CompositeCoefficients,
) -> Result<CompositeScore, MetricsError> {
    if !coeffs.has_nonzero_weight() {
        return Err(MetricsError::DegenerateCoefficients);
    }
    let raw = coeffs.intercept
        + coeffs.w_bleu * mv.bleu2
        + coeffs.w_soft * mv.soft_f1
        + coeffs.w_semb * mv.semb
        + coeffs.w_radgraph * mv.radgraph_f1;
    let reported = if coeffs.reciprocal {
        if raw > 0.0 {
            1.0 / raw
        } else {
            return Err(MetricsError::NonPositiveComposite { raw });
        }
    } else {
        raw
    };
    Ok(CompositeScore { raw, reported })
}
