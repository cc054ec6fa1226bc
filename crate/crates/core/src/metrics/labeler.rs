//! Rule-based pathology labeler and the indicator-vector cosine score.
//!
//! A label is affirmed when one of its trigger phrases occurs outside a
//! negation window: a negation cue within the `negation_window` tokens
//! immediately preceding the trigger, inside the same sentence. The window
//! size is configurable and defaults to 3.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::text::{sentences, tokenize};
use super::MetricsError;

pub const DEFAULT_NEGATION_WINDOW: usize = 3;

/// Wire form of one label's patterns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelPatterns {
    pub triggers: Vec<String>,
    #[serde(default)]
    pub negators: Vec<String>,
}

/// Ordered label set with tokenized trigger and negator phrases.
#[derive(Debug, Clone)]
pub struct LabelLexicon {
    labels: Vec<(String, CompiledLabel)>,
    negation_window: usize,
}

#[derive(Debug, Clone)]
struct CompiledLabel {
    triggers: Vec<Vec<String>>,
    negators: Vec<Vec<String>>,
}

fn compile_phrases(phrases: &[String]) -> Vec<Vec<String>> {
    phrases
        .iter()
        .map(|p| tokenize(p))
        .filter(|p| !p.is_empty())
        .collect()
}

/// Negation cues shared by the default lexicons.
pub fn default_negators() -> Vec<String> {
    [
        "no",
        "not",
        "without",
        "free of",
        "negative for",
        "absence of",
        "clear of",
        "resolved",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

impl LabelLexicon {
    /// Build a lexicon from label -> patterns pairs. Labels are kept in the
    /// given order; empty trigger lists are rejected at labeling time.
    pub fn new(entries: Vec<(String, LabelPatterns)>, negation_window: usize) -> Self {
        let labels = entries
            .into_iter()
            .map(|(name, patterns)| {
                (
                    name,
                    CompiledLabel {
                        triggers: compile_phrases(&patterns.triggers),
                        negators: compile_phrases(&patterns.negators),
                    },
                )
            })
            .collect();
        LabelLexicon {
            labels,
            negation_window,
        }
    }

    /// Parse the JSON wire format `{"label": {"triggers": [..],
    /// "negators": [..]}}`. Labels are sorted by name so the indicator
    /// order is stable regardless of key order in the file.
    pub fn from_json_reader<R: Read>(reader: R) -> Result<Self, serde_json::Error> {
        let map: BTreeMap<String, LabelPatterns> = serde_json::from_reader(reader)?;
        Ok(LabelLexicon::new(
            map.into_iter().collect(),
            DEFAULT_NEGATION_WINDOW,
        ))
    }

    /// The standard 14-label chest pathology set with small trigger lists.
    pub fn default_14() -> Self {
        let neg = default_negators();
        let entry = |triggers: &[&str]| LabelPatterns {
            triggers: triggers.iter().map(|s| s.to_string()).collect(),
            negators: neg.clone(),
        };
        let labels = vec![
            ("atelectasis", entry(&["atelectasis", "atelectatic"])),
            (
                "cardiomegaly",
                entry(&[
                    "cardiomegaly",
                    "enlarged heart",
                    "cardiac enlargement",
                    "heart is enlarged",
                ]),
            ),
            ("consolidation", entry(&["consolidation", "consolidative"])),
            ("edema", entry(&["edema", "vascular congestion"])),
            (
                "enlarged_cardiomediastinum",
                entry(&[
                    "enlarged cardiomediastinum",
                    "widened mediastinum",
                    "mediastinal widening",
                ]),
            ),
            ("fracture", entry(&["fracture", "fractures", "fractured"])),
            (
                "lung_lesion",
                entry(&["lung lesion", "nodule", "nodules", "mass"]),
            ),
            (
                "lung_opacity",
                entry(&["opacity", "opacities", "opacification"]),
            ),
            (
                "no_finding",
                entry(&[
                    "no acute cardiopulmonary process",
                    "no acute cardiopulmonary abnormality",
                    "no acute disease",
                ]),
            ),
            (
                "pleural_effusion",
                entry(&[
                    "pleural effusion",
                    "pleural effusions",
                    "effusion",
                    "effusions",
                ]),
            ),
            (
                "pleural_other",
                entry(&["pleural thickening", "pleural scarring"]),
            ),
            ("pneumonia", entry(&["pneumonia", "infectious process"])),
            ("pneumothorax", entry(&["pneumothorax", "pneumothoraces"])),
            (
                "support_devices",
                entry(&["tube", "catheter", "pacemaker", "picc", "central line"]),
            ),
        ];
        LabelLexicon::new(
            labels
                .into_iter()
                .map(|(n, p)| (n.to_string(), p))
                .collect(),
            DEFAULT_NEGATION_WINDOW,
        )
    }

    pub fn with_negation_window(mut self, window: usize) -> Self {
        self.negation_window = window;
        self
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn label_names(&self) -> Vec<&str> {
        self.labels.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn negation_window(&self) -> usize {
        self.negation_window
    }
}

/// Ordered indicator vector over a lexicon's label set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathologyLabels {
    pub indicators: Vec<u8>,
}

impl PathologyLabels {
    pub fn affirmed_count(&self) -> usize {
        self.indicators.iter().filter(|&&v| v == 1).count()
    }
}

/// True when `phrase` occurs as a contiguous subsequence of `window`.
fn contains_phrase(window: &[String], phrase: &[String]) -> bool {
    if phrase.is_empty() || window.len() < phrase.len() {
        return false;
    }
    window.windows(phrase.len()).any(|w| w == phrase)
}

fn occurrence_is_negated(
    tokens: &[String],
    start: usize,
    negators: &[Vec<String>],
    window: usize,
) -> bool {
    let lo = start.saturating_sub(window);
    let preceding = &tokens[lo..start];
    negators.iter().any(|neg| contains_phrase(preceding, neg))
}

fn label_affirmed(sentences: &[Vec<String>], label: &CompiledLabel, window: usize) -> bool {
    for tokens in sentences {
        for trigger in &label.triggers {
            if trigger.is_empty() || trigger.len() > tokens.len() {
                continue;
            }
            for start in 0..=(tokens.len() - trigger.len()) {
                if tokens[start..start + trigger.len()] == trigger[..]
                    && !occurrence_is_negated(tokens, start, &label.negators, window)
                {
                    return true;
                }
            }
        }
    }
    false
}

/// Apply the lexicon to a report. Deterministic; fails only on an empty
/// lexicon.
pub fn label_pathologies(
    report: &str,
    lexicon: &LabelLexicon,
) -> Result<PathologyLabels, MetricsError> {
    if lexicon.is_empty() {
        return Err(MetricsError::EmptyLexicon);
    }
    let sentence_tokens: Vec<Vec<String>> = sentences(report).iter().map(|s| tokenize(s)).collect();
    let indicators = lexicon
        .labels
        .iter()
        .map(|(_, label)| {
            u8::from(label_affirmed(
                &sentence_tokens,
                label,
                lexicon.negation_window,
            ))
        })
        .collect();
    Ok(PathologyLabels { indicators })
}

/// Names of the labels affirmed in a report; the mock judge compares these
/// sets between candidate and reference.
pub fn affirmed_labels(
    report: &str,
    lexicon: &LabelLexicon,
) -> Result<BTreeSet<String>, MetricsError> {
    let labels = label_pathologies(report, lexicon)?;
    Ok(lexicon
        .labels
        .iter()
        .zip(&labels.indicators)
        .filter(|(_, &v)| v == 1)
        .map(|((name, _), _)| name.clone())
        .collect())
}

/// Cosine similarity between indicator vectors. Both all-zero scores 1,
/// exactly one all-zero scores 0.
pub fn semb_score(
    cand: &PathologyLabels,
    reference: &PathologyLabels,
) -> Result<f64, MetricsError> {
    if cand.indicators.len() != reference.indicators.len() {
        return Err(MetricsError::LengthMismatch {
            a: cand.indicators.len(),
            b: reference.indicators.len(),
        });
    }
    let dot: f64 = cand
        .indicators
        .iter()
        .zip(&reference.indicators)
        .map(|(&a, &b)| f64::from(a) * f64::from(b))
        .sum();
    let ca = cand.affirmed_count();
    let cb = reference.affirmed_count();
    if ca == 0 && cb == 0 {
        return Ok(1.0);
    }
    if ca == 0 || cb == 0 {
        return Ok(0.0);
    }
    // sqrt of the exact integer product keeps identical vectors at 1.0.
    Ok(dot / ((ca * cb) as f64).sqrt())
}
