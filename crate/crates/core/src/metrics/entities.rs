//! Deterministic entity/relation extraction and the graph-overlap F1.
//!
//! A small pattern extractor stands in for the neural entity-relation
//! model: lexicon spans become entities, polarity follows the same
//! negation-window rule as the labeler (uncertainty cues yield
//! `Uncertain`, negation wins when both appear), and a `located_at`
//! relation is emitted whenever an observation and an anatomy entity
//! co-occur in one sentence.

use std::collections::BTreeSet;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::labeler::{default_negators, DEFAULT_NEGATION_WINDOW};
use super::text::{sentences, tokenize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityType {
    Anatomy,
    Observation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Present,
    Absent,
    Uncertain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationType {
    Modify,
    LocatedAt,
    SuggestiveOf,
}

/// One extracted entity: normalized span text, type, and polarity.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Entity {
    pub text: String,
    pub kind: EntityType,
    pub polarity: Polarity,
}

/// One extracted relation; endpoints are entities of the same graph.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Relation {
    pub head: Entity,
    pub tail: Entity,
    pub kind: RelationType,
}

/// Set-valued graph of entities and relations.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityGraph {
    pub entities: BTreeSet<Entity>,
    pub relations: BTreeSet<Relation>,
}

/// Span lexicons driving the extractor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatternSet {
    pub observations: Vec<String>,
    pub anatomy: Vec<String>,
    #[serde(default)]
    pub negators: Vec<String>,
    #[serde(default)]
    pub uncertainty: Vec<String>,
    #[serde(default = "default_window")]
    pub negation_window: usize,
}

fn default_window() -> usize {
    DEFAULT_NEGATION_WINDOW
}

pub fn default_uncertainty_cues() -> Vec<String> {
    [
        "possible",
        "possibly",
        "may",
        "might",
        "suspected",
        "questionable",
        "question of",
        "cannot exclude",
        "concern for",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

impl PatternSet {
    /// Chest defaults: observation spans shared with the 14-label lexicon
    /// plus a small anatomy vocabulary.
    pub fn default_chest() -> Self {
        let observations = [
            "atelectasis",
            "cardiomegaly",
            "consolidation",
            "edema",
            "effusion",
            "effusions",
            "pleural effusion",
            "fracture",
            "nodule",
            "mass",
            "opacity",
            "opacities",
            "pneumonia",
            "pneumothorax",
            "vascular congestion",
            "pleural thickening",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let anatomy = [
            "right lower lobe",
            "right upper lobe",
            "right middle lobe",
            "left lower lobe",
            "left upper lobe",
            "lingula",
            "right lung",
            "left lung",
            "lungs",
            "lung bases",
            "right base",
            "left base",
            "heart",
            "cardiac silhouette",
            "mediastinum",
            "right hemithorax",
            "left hemithorax",
            "costophrenic angle",
            "diaphragm",
            "ribs",
            "spine",
            "chest wall",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        PatternSet {
            observations,
            anatomy,
            negators: default_negators(),
            uncertainty: default_uncertainty_cues(),
            negation_window: DEFAULT_NEGATION_WINDOW,
        }
    }

    pub fn from_json_reader<R: Read>(reader: R) -> Result<Self, serde_json::Error> {
        serde_json::from_reader(reader)
    }
}

fn contains_phrase(window: &[String], phrase: &[String]) -> bool {
    !phrase.is_empty()
        && window.len() >= phrase.len()
        && window.windows(phrase.len()).any(|w| w == phrase)
}

fn polarity_at(
    tokens: &[String],
    start: usize,
    negators: &[Vec<String>],
    uncertainty: &[Vec<String>],
    window: usize,
) -> Polarity {
    let lo = start.saturating_sub(window);
    let preceding = &tokens[lo..start];
    if negators.iter().any(|n| contains_phrase(preceding, n)) {
        Polarity::Absent
    } else if uncertainty.iter().any(|u| contains_phrase(preceding, u)) {
        Polarity::Uncertain
    } else {
        Polarity::Present
    }
}

fn find_spans(
    tokens: &[String],
    phrases: &[Vec<String>],
    kind: EntityType,
    negators: &[Vec<String>],
    uncertainty: &[Vec<String>],
    window: usize,
) -> Vec<Entity> {
    let mut found = Vec::new();
    for phrase in phrases {
        if phrase.is_empty() || phrase.len() > tokens.len() {
            continue;
        }
        for start in 0..=(tokens.len() - phrase.len()) {
            if tokens[start..start + phrase.len()] == phrase[..] {
                found.push(Entity {
                    text: phrase.join(" "),
                    kind,
                    polarity: polarity_at(tokens, start, negators, uncertainty, window),
                });
            }
        }
    }
    found
}

/// Extract the entity graph of a report.
pub fn extract_entities(report: &str, patterns: &PatternSet) -> EntityGraph {
    let observations = compile(&patterns.observations);
    let anatomy = compile(&patterns.anatomy);
    let negators = compile(&patterns.negators);
    let uncertainty = compile(&patterns.uncertainty);

    let mut graph = EntityGraph::default();
    for sentence in sentences(report) {
        let tokens = tokenize(&sentence);
        let obs = find_spans(
            &tokens,
            &observations,
            EntityType::Observation,
            &negators,
            &uncertainty,
            patterns.negation_window,
        );
        let anat = find_spans(
            &tokens,
            &anatomy,
            EntityType::Anatomy,
            &negators,
            &uncertainty,
            patterns.negation_window,
        );
        for o in &obs {
            for a in &anat {
                graph.relations.insert(Relation {
                    head: o.clone(),
                    tail: a.clone(),
                    kind: RelationType::LocatedAt,
                });
            }
        }
        graph.entities.extend(obs);
        graph.entities.extend(anat);
    }
    graph
}

fn compile(phrases: &[String]) -> Vec<Vec<String>> {
    phrases
        .iter()
        .map(|p| tokenize(p))
        .filter(|p| !p.is_empty())
        .collect()
}

fn set_f1<T: Ord>(cand: &BTreeSet<T>, reference: &BTreeSet<T>) -> f64 {
    if cand.is_empty() && reference.is_empty() {
        return 1.0;
    }
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let matched = cand.intersection(reference).count() as f64;
    let precision = matched / cand.len() as f64;
    let recall = matched / reference.len() as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Average of exact-match entity F1 and exact-match relation F1. An empty
/// graph against an empty graph scores 1 and against a non-empty graph
/// scores 0; within non-empty graphs the same rule applies per component.
pub fn radgraph_f1(cand: &EntityGraph, reference: &EntityGraph) -> f64 {
    let cand_empty = cand.entities.is_empty() && cand.relations.is_empty();
    let ref_empty = reference.entities.is_empty() && reference.relations.is_empty();
    match (cand_empty, ref_empty) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        (false, false) => {
            let entity_f1 = set_f1(&cand.entities, &reference.entities);
            let relation_f1 = set_f1(&cand.relations, &reference.relations);
            (entity_f1 + relation_f1) / 2.0
        }
    }
}
