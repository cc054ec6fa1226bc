//! Property tests over the stated invariants, with randomized corpora and
//! report texts.

use proptest::prelude::*;

use reportgen_core::corpus::{
    filter_corpus, group_by_patient, link_prior, parse_sections, Demographics, ImageRef,
    ReportSections, StudyRecord, Timestamp, ViewPosition,
};
use reportgen_core::eval::ErrorHistogram;
use reportgen_core::judge::{MockEmbedder, MockJudge, ReportJudge};
use reportgen_core::metrics::{
    bleu2, extract_entities, label_pathologies, radgraph_f1, semb_score, soft_token_f1,
    LabelLexicon, PathologyLabels, PatternSet,
};

const PHRASES: &[&str] = &[
    "clear lungs",
    "no pleural effusion",
    "large pleural effusion",
    "no pneumothorax",
    "small pneumothorax",
    "pneumonia in the right lower lobe",
    "mild edema",
    "without consolidation",
    "stable cardiomegaly",
    "opacity in the left lung",
];

fn report_text() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(PHRASES.to_vec()), 0..5).prop_map(|phrases| {
        phrases
            .iter()
            .map(|p| {
                let mut s = p.to_string();
                s.push('.');
                s
            })
            .collect::<Vec<_>>()
            .join(" ")
    })
}

fn section() -> impl Strategy<Value = Option<String>> {
    prop::option::of("[a-z]{1,8}( [a-z]{1,8}){0,4}")
}

fn study_record() -> impl Strategy<Value = (u16, u32, bool, Option<String>, Option<String>)> {
    // (patient, timestamp offset, has frontal image, findings, impression)
    (0u16..4, 0u32..100_000, any::<bool>(), section(), section())
}

fn build_record(
    index: usize,
    patient: u16,
    offset: u32,
    frontal: bool,
    findings: Option<String>,
    impression: Option<String>,
) -> StudyRecord {
    let view = if frontal {
        ViewPosition::FrontalPa
    } else {
        ViewPosition::Lateral
    };
    StudyRecord {
        study_id: format!("s{index:03}"),
        patient_id: format!("p{patient}"),
        // Unique seconds offset keeps timestamps distinct per record.
        timestamp: Timestamp::parse(&format!(
            "2024-01-01T00:00:{:02}.{:06}Z",
            index % 60,
            offset
        ))
        .unwrap(),
        images: vec![ImageRef::new(format!("img/{index}.png"), view)],
        sections: ReportSections {
            indication: None,
            comparison: None,
            findings,
            impression,
        }
        .normalized(),
        demographics: Demographics::default(),
    }
}

proptest! {
    #[test]
    fn parse_sections_idempotent_on_rendered_output(
        indication in section(),
        comparison in section(),
        findings in section(),
        impression in section(),
    ) {
        let sections = ReportSections { indication, comparison, findings, impression }.normalized();
        let once = parse_sections(&sections.to_report_text());
        let twice = parse_sections(&once.to_report_text());
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn filtered_corpora_never_keep_empty_reports(
        specs in prop::collection::vec(study_record(), 0..24)
    ) {
        let records: Vec<StudyRecord> = specs
            .into_iter()
            .enumerate()
            .map(|(i, (p, o, f, fi, im))| build_record(i, p, o, f, fi, im))
            .collect();
        let kept = filter_corpus(records);
        prop_assert!(kept.iter().all(|r| !r.sections.is_report_empty()));
    }

    #[test]
    fn linked_priors_are_earlier_and_frontal(
        specs in prop::collection::vec(study_record(), 1..24)
    ) {
        let records: Vec<StudyRecord> = specs
            .into_iter()
            .enumerate()
            .map(|(i, (p, o, f, fi, im))| build_record(i, p, o, f, fi, im))
            .collect();
        for (_, group) in group_by_patient(&records) {
            let owned: Vec<StudyRecord> = group.iter().map(|r| (*r).clone()).collect();
            let priors = link_prior(&owned).unwrap();
            for record in &owned {
                if let Some(prior_id) = &priors[&record.study_id] {
                    let prior = owned.iter().find(|r| &r.study_id == prior_id).unwrap();
                    prop_assert!(prior.timestamp < record.timestamp);
                    prop_assert!(prior.has_frontal_image());
                    prop_assert!(!prior.sections.is_report_empty());
                }
            }
        }
    }

    #[test]
    fn bleu_identity_and_range(text in report_text()) {
        let score = bleu2(&text, &text);
        if text.split_whitespace().next().is_some() {
            prop_assert_eq!(score, 1.0);
        } else {
            prop_assert_eq!(score, 0.0);
        }
    }

    #[test]
    fn bleu_stays_in_unit_interval(a in report_text(), b in report_text()) {
        let score = bleu2(&a, &b);
        prop_assert!((0.0..=1.0).contains(&score));
    }

    #[test]
    fn soft_f1_swaps_precision_and_recall(a in report_text(), b in report_text()) {
        let embedder = MockEmbedder::default();
        let ab = soft_token_f1(&a, &b, &embedder).unwrap();
        let ba = soft_token_f1(&b, &a, &embedder).unwrap();
        prop_assert_eq!(ab.precision.to_bits(), ba.recall.to_bits());
        prop_assert_eq!(ab.recall.to_bits(), ba.precision.to_bits());
        prop_assert!((0.0..=1.0).contains(&ab.f1));
    }

    #[test]
    fn semb_is_bounded_and_one_on_self(bits in prop::collection::vec(0u8..=1, 1..20)) {
        let labels = PathologyLabels { indicators: bits };
        let self_score = semb_score(&labels, &labels).unwrap();
        prop_assert_eq!(self_score, 1.0);
    }

    #[test]
    fn semb_magnitude_never_exceeds_one(
        a in prop::collection::vec(0u8..=1, 14),
        b in prop::collection::vec(0u8..=1, 14),
    ) {
        let a = PathologyLabels { indicators: a };
        let b = PathologyLabels { indicators: b };
        let score = semb_score(&a, &b).unwrap();
        prop_assert!(score.abs() <= 1.0);
    }

    #[test]
    fn radgraph_is_symmetric(a in report_text(), b in report_text()) {
        let patterns = PatternSet::default_chest();
        let ga = extract_entities(&a, &patterns);
        let gb = extract_entities(&b, &patterns);
        prop_assert_eq!(radgraph_f1(&ga, &gb).to_bits(), radgraph_f1(&gb, &ga).to_bits());
    }

    #[test]
    fn extracted_relations_are_grounded(a in report_text()) {
        let graph = extract_entities(&a, &PatternSet::default_chest());
        for relation in &graph.relations {
            prop_assert!(graph.entities.contains(&relation.head));
            prop_assert!(graph.entities.contains(&relation.tail));
        }
    }

    #[test]
    fn mock_judge_scores_identity_zero_and_is_pure(text in report_text()) {
        prop_assume!(!text.trim().is_empty());
        let judge = MockJudge::default();
        let first = judge.count_errors(&text, &text).unwrap();
        let second = judge.count_errors(&text, &text).unwrap();
        prop_assert_eq!(first.error_count, 0);
        prop_assert_eq!(first, second);
    }

    #[test]
    fn labeler_is_deterministic(text in report_text()) {
        let lexicon = LabelLexicon::default_14();
        let a = label_pathologies(&text, &lexicon).unwrap();
        let b = label_pathologies(&text, &lexicon).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn histogram_counts_partition_inputs(counts in prop::collection::vec(0u32..12, 0..64)) {
        let histogram = ErrorHistogram::from_counts(counts.clone());
        prop_assert_eq!(histogram.total(), counts.len());
    }
}
