//! Regenerates the synthetic corpus shipped under `data/`. The corpus
//! mimics the production JSONL schema: longitudinal patients, mixed view
//! positions, demographic metadata, and report texts built from a small
//! pathology phrase bank so the labeler, extractor, and mock judge all
//! have something to chew on.
//!
//!     cargo run -p reportgen-core --example make_synthetic_corpus -- data/synthetic_corpus.jsonl

use std::io::BufWriter;

use reportgen_core::corpus::{
    write_corpus, Demographics, ImageRef, ReportSections, StudyRecord, Timestamp, ViewPosition,
};
use reportgen_core::rng;

struct Course {
    findings: &'static [&'static str],
    impressions: &'static [&'static str],
}

// Per-patient disease courses; index = encounter number.
const COURSES: &[Course] = &[
    Course {
        findings: &[
            "Clear lungs. No pleural effusion or pneumothorax.",
            "New small left pleural effusion. Heart size normal.",
            "Small left pleural effusion unchanged. No pneumothorax.",
            "Left pleural effusion has resolved. Clear lungs.",
        ],
        impressions: &[
            "No acute cardiopulmonary process.",
            "New left pleural effusion.",
            "Stable left pleural effusion.",
            "Resolved effusion.",
        ],
    },
    Course {
        findings: &[
            "Opacity in the right lower lobe concerning for pneumonia.",
            "Right lower lobe opacity improving. No effusion.",
            "Persistent right lower lobe opacity with new small right pleural effusion.",
            "Opacity and effusion resolved. Lungs are clear.",
        ],
        impressions: &[
            "Right lower lobe pneumonia.",
            "Improving pneumonia.",
            "Pneumonia with new effusion.",
            "Resolved pneumonia.",
        ],
    },
    Course {
        findings: &[
            "Cardiomegaly with mild edema.",
            "Cardiomegaly unchanged. Edema has resolved.",
            "Cardiomegaly and recurrent edema. Support devices in standard position; endotracheal tube present.",
        ],
        impressions: &[
            "Cardiomegaly with edema.",
            "Stable cardiomegaly.",
            "Recurrent edema.",
        ],
    },
    Course {
        findings: &[
            "No pneumothorax. Mild atelectasis at the left base.",
            "Small apical pneumothorax after procedure.",
            "Pneumothorax has resolved. Atelectasis unchanged.",
        ],
        impressions: &[
            "Atelectasis.",
            "New small pneumothorax.",
            "Resolved pneumothorax.",
        ],
    },
];

const INDICATIONS: &[&str] = &[
    "Cough and fever.",
    "Shortness of breath.",
    "Chest pain.",
    "Follow-up of known effusion.",
    "Line placement check.",
];

const GENDERS: &[&str] = &["F", "M"];
const AGE_BANDS: &[&str] = &["18-39", "40-64", "65+"];
const RACES: &[&str] = &["white", "black", "asian", "other"];
const SITES: &[&str] = &["site_a", "site_b"];

fn main() {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "data/synthetic_corpus.jsonl".to_string());
    let mut rng = rng::seeded(7);
    let mut records = Vec::new();

    // Visit counts chosen so the encounter buckets 1..5+ are all
    // populated and every filtering edge case exists.
    const VISITS: [usize; 8] = [6, 4, 3, 3, 2, 3, 3, 4];
    for patient in 0..8usize {
        let course = &COURSES[patient % COURSES.len()];
        let encounters = VISITS[patient];
        let gender = GENDERS[rng::index(&mut rng, GENDERS.len())];
        let age_band = AGE_BANDS[rng::index(&mut rng, AGE_BANDS.len())];
        let race = RACES[rng::index(&mut rng, RACES.len())];
        let site = SITES[rng::index(&mut rng, SITES.len())];
        for visit in 0..encounters {
            let study_id = format!("s{patient:02}{visit:02}");
            let month = 1 + visit * 2 + rng::index(&mut rng, 2);
            let day = 1 + rng::index(&mut rng, 27);
            let hour = 6 + rng::index(&mut rng, 12);
            let timestamp = format!("2024-{month:02}-{day:02}T{hour:02}:30:00Z");

            let mut images = vec![ImageRef::new(
                format!("images/{study_id}_frontal.png"),
                if rng::index(&mut rng, 2) == 0 {
                    ViewPosition::FrontalPa
                } else {
                    ViewPosition::FrontalAp
                },
            )];
            if rng::index(&mut rng, 3) > 0 {
                images.push(ImageRef::new(
                    format!("images/{study_id}_lateral.png"),
                    ViewPosition::Lateral,
                ));
            }
            // Patient 6's second study is lateral-only: ineligible as a
            // longitudinal prior.
            if patient == 6 && visit == 1 {
                images = vec![ImageRef::new(
                    format!("images/{study_id}_lateral.png"),
                    ViewPosition::Lateral,
                )];
            }

            let mut sections = ReportSections {
                indication: Some(INDICATIONS[rng::index(&mut rng, INDICATIONS.len())].to_string()),
                comparison: if visit == 0 {
                    None
                } else {
                    Some("Prior chest radiograph.".to_string())
                },
                findings: Some(course.findings[visit % course.findings.len()].to_string()),
                impression: Some(course.impressions[visit % course.impressions.len()].to_string()),
            };
            // Sprinkle the filtering edge cases: a findings-only report, an
            // impression-only report, and one fully empty report that
            // ingest must drop.
            if patient == 5 && visit == 0 {
                sections.impression = None;
            }
            if patient == 7 && visit == 0 {
                sections.findings = None;
            }
            if patient == 3 && visit == 2 {
                sections.findings = None;
                sections.impression = None;
            }

            records.push(StudyRecord {
                study_id,
                patient_id: format!("p{patient:02}"),
                timestamp: Timestamp::parse(&timestamp).expect("valid synthetic timestamp"),
                images,
                sections,
                demographics: Demographics {
                    gender: Some(gender.to_string()),
                    age_band: Some(age_band.to_string()),
                    race: Some(race.to_string()),
                    site: Some(site.to_string()),
                },
            });
        }
    }

    if let Some(parent) = std::path::Path::new(&out).parent() {
        std::fs::create_dir_all(parent).expect("create output dir");
    }
    let file = std::fs::File::create(&out).expect("create output file");
    write_corpus(BufWriter::new(file), &records).expect("write corpus");
    eprintln!("wrote {} records to {out}", records.len());
}
