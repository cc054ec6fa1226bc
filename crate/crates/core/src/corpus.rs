//! Corpus data model and curation: report sectioning, filtering, prompt
//! construction, longitudinal prior linking, encounter indexing, and
//! validation splitting.
//!
//! The wire format is JSON-Lines, one [`StudyRecord`] per line. Loading
//! normalizes sections (empty-after-trim becomes absent), validates
//! timestamps, and rejects duplicate study ids.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::rng;

/// Errors raised by corpus loading and curation.
#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed record: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("line {line}: invalid timestamp {raw:?}")]
    InvalidTimestamp { line: usize, raw: String },
    #[error("line {line}: duplicate study_id {study_id:?}")]
    DuplicateStudyId { line: usize, study_id: String },
    #[error("study {study_id:?} has neither findings nor impression")]
    EmptyReport { study_id: String },
    #[error("records span multiple patients: {a:?} and {b:?}")]
    MixedPatients { a: String, b: String },
    #[error("validation size {n} exceeds corpus size {len}")]
    SplitTooLarge { n: usize, len: usize },
}

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// The four recognized report sections. Absent is distinct from empty:
/// loaders normalize empty-after-trim text to absent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportSections {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indication: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub findings: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impression: Option<String>,
}

impl ReportSections {
    /// Trim every present section and drop the ones that are empty after
    /// trimming.
    pub fn normalized(self) -> Self {
        fn norm(s: Option<String>) -> Option<String> {
            s.and_then(|t| {
                let t = t.trim();
                if t.is_empty() {
                    None
                } else {
                    Some(t.to_string())
                }
            })
        }
        ReportSections {
            indication: norm(self.indication),
            comparison: norm(self.comparison),
            findings: norm(self.findings),
            impression: norm(self.impression),
        }
    }

    /// True when neither findings nor impression is present.
    pub fn is_report_empty(&self) -> bool {
        self.findings.is_none() && self.impression.is_none()
    }

    /// Canonical report text: available sections in `Findings:` then
    /// `Impression:` order, one per line. This is the generation target and
    /// the reference text used by every metric.
    pub fn target_text(&self) -> String {
        let mut lines = Vec::new();
        if let Some(f) = &self.findings {
            lines.push(format!("Findings: {f}"));
        }
        if let Some(i) = &self.impression {
            lines.push(format!("Impression: {i}"));
        }
        lines.join("\n")
    }

    /// Render all present sections back to headed report text, parseable by
    /// [`parse_sections`].
    pub fn to_report_text(&self) -> String {
        let mut lines = Vec::new();
        if let Some(s) = &self.indication {
            lines.push(format!("Indication: {s}"));
        }
        if let Some(s) = &self.comparison {
            lines.push(format!("Comparison: {s}"));
        }
        if let Some(s) = &self.findings {
            lines.push(format!("Findings: {s}"));
        }
        if let Some(s) = &self.impression {
            lines.push(format!("Impression: {s}"));
        }
        lines.join("\n")
    }
}

/// Radiograph view position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewPosition {
    FrontalAp,
    FrontalPa,
    Lateral,
    Other,
}

impl ViewPosition {
    pub fn is_frontal(self) -> bool {
        matches!(self, ViewPosition::FrontalAp | ViewPosition::FrontalPa)
    }
}

fn default_resolution() -> (u32, u32) {
    (512, 512)
}

fn is_default_resolution(r: &(u32, u32)) -> bool {
    *r == default_resolution()
}

/// Opaque reference to one image. `target_resolution` is a preprocessing
/// contract carried as metadata; no pixel work happens in this crate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub uri: String,
    pub view: ViewPosition,
    #[serde(
        default = "default_resolution",
        skip_serializing_if = "is_default_resolution"
    )]
    pub target_resolution: (u32, u32),
}

impl ImageRef {
    pub fn new(uri: impl Into<String>, view: ViewPosition) -> Self {
        ImageRef {
            uri: uri.into(),
            view,
            target_resolution: default_resolution(),
        }
    }
}

/// Demographic metadata, all axes optional.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demographics {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age_band: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub race: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site: Option<String>,
}

impl Demographics {
    pub fn is_empty(&self) -> bool {
        self.gender.is_none()
            && self.age_band.is_none()
            && self.race.is_none()
            && self.site.is_none()
    }

    /// Look up an axis by name. Unknown axes return `None`.
    pub fn get(&self, axis: &str) -> Option<&str> {
        match axis {
            "gender" => self.gender.as_deref(),
            "age_band" => self.age_band.as_deref(),
            "race" => self.race.as_deref(),
            "site" => self.site.as_deref(),
            _ => None,
        }
    }
}

/// An ISO-8601 instant. Keeps the original text for round-tripping and a
/// parsed nanosecond offset from the Unix epoch for ordering.
#[derive(Debug, Clone)]
pub struct Timestamp {
    raw: String,
    nanos: i128,
}

impl Timestamp {
    /// Parse `YYYY-MM-DD[THH:MM[:SS[.frac]]][Z|±HH:MM]`. A missing time
    /// means midnight; a missing zone means UTC.
    pub fn parse(raw: &str) -> Option<Timestamp> {
        let nanos = parse_instant_nanos(raw)?;
        Some(Timestamp {
            raw: raw.to_string(),
            nanos,
        })
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }

    /// Nanoseconds since the Unix epoch.
    pub fn epoch_nanos(&self) -> i128 {
        self.nanos
    }
}

impl PartialEq for Timestamp {
    fn eq(&self, other: &Self) -> bool {
        self.nanos == other.nanos
    }
}
impl Eq for Timestamp {}
impl PartialOrd for Timestamp {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Timestamp {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.nanos.cmp(&other.nanos)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.raw)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        Timestamp::parse(&raw)
            .ok_or_else(|| serde::de::Error::custom(format!("invalid timestamp {raw:?}")))
    }
}

/// Days from 1970-01-01 for a civil date (proleptic Gregorian).
fn days_from_civil(y: i64, m: i64, d: i64) -> i64 {
    let y = if m <= 2 { y - 1 } else { y };
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = y - era * 400;
    let mp = (m + 9) % 12;
    let doy = (153 * mp + 2) / 5 + d - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146097 + doe - 719468
}

fn days_in_month(y: i64, m: i64) -> i64 {
    match m {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        2 => {
            if (y % 4 == 0 && y % 100 != 0) || y % 400 == 0 {
                29
            } else {
                28
            }
        }
        _ => 0,
    }
}

fn parse_fixed_u32(s: &str) -> Option<i64> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse::<i64>().ok()
}

fn parse_instant_nanos(raw: &str) -> Option<i128> {
    let raw = raw.trim();
    if raw.len() < 10 {
        return None;
    }
    let (date, rest) = raw.split_at(10);
    let bytes = date.as_bytes();
    if bytes[4] != b'-' || bytes[7] != b'-' {
        return None;
    }
    let y = parse_fixed_u32(&date[0..4])?;
    let m = parse_fixed_u32(&date[5..7])?;
    let d = parse_fixed_u32(&date[8..10])?;
    if !(1..=12).contains(&m) || d < 1 || d > days_in_month(y, m) {
        return None;
    }

    let mut secs_of_day: i64 = 0;
    let mut frac_nanos: i64 = 0;
    let mut offset_secs: i64 = 0;
    if !rest.is_empty() {
        let mut time = rest
            .strip_prefix('T')
            .or_else(|| rest.strip_prefix(' '))?
            .to_string();
        // Split off the zone designator, if any.
        if let Some(stripped) = time.strip_suffix('Z') {
            time = stripped.to_string();
        } else if time.len() > 6 {
            let tail = &time[time.len() - 6..];
            let tb = tail.as_bytes();
            if (tb[0] == b'+' || tb[0] == b'-') && tb[3] == b':' {
                let oh = parse_fixed_u32(&tail[1..3])?;
                let om = parse_fixed_u32(&tail[4..6])?;
                if oh > 23 || om > 59 {
                    return None;
                }
                let sign = if tb[0] == b'+' { 1 } else { -1 };
                offset_secs = sign * (oh * 3600 + om * 60);
                time = time[..time.len() - 6].to_string();
            }
        }
        if time.len() < 5 || time.as_bytes()[2] != b':' {
            return None;
        }
        let h = parse_fixed_u32(&time[0..2])?;
        let min = parse_fixed_u32(&time[3..5])?;
        let mut s = 0;
        if time.len() > 5 {
            if time.as_bytes()[5] != b':' || time.len() < 8 {
                return None;
            }
            s = parse_fixed_u32(&time[6..8])?;
            if time.len() > 8 {
                let frac = time[8..].strip_prefix('.')?;
                if frac.is_empty() || frac.len() > 9 || !frac.bytes().all(|b| b.is_ascii_digit()) {
                    return None;
                }
                let mut n = frac.parse::<i64>().ok()?;
                for _ in frac.len()..9 {
                    n *= 10;
                }
                frac_nanos = n;
            }
        }
        if h > 23 || min > 59 || s > 59 {
            return None;
        }
        secs_of_day = h * 3600 + min * 60 + s;
    }

    let days = days_from_civil(y, m, d);
    let secs = days * 86400 + secs_of_day - offset_secs;
    Some(secs as i128 * 1_000_000_000 + frac_nanos as i128)
}

/// One imaging study with its report and metadata. The wire `report`
/// field accepts either structured sections or raw report text, which is
/// run through [`parse_sections`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyRecord {
    pub study_id: String,
    pub patient_id: String,
    pub timestamp: Timestamp,
    #[serde(default)]
    pub images: Vec<ImageRef>,
    #[serde(rename = "report", default, deserialize_with = "raw_or_sections")]
    pub sections: ReportSections,
    #[serde(default, skip_serializing_if = "Demographics::is_empty")]
    pub demographics: Demographics,
}

fn raw_or_sections<'de, D: Deserializer<'de>>(deserializer: D) -> Result<ReportSections, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Wire {
        Raw(String),
        Sections(ReportSections),
    }
    Ok(match Wire::deserialize(deserializer)? {
        Wire::Raw(text) => parse_sections(&text),
        Wire::Sections(sections) => sections,
    })
}

impl StudyRecord {
    /// Sort key for within-patient chronology: timestamp, ties broken by
    /// study_id so encounter indices are deterministic.
    fn chrono_key(&self) -> (i128, &str) {
        (self.timestamp.epoch_nanos(), &self.study_id)
    }

    pub fn has_frontal_image(&self) -> bool {
        self.images.iter().any(|i| i.view.is_frontal())
    }

    /// The designated key image: first frontal, AP preferred over PA when
    /// both exist. Falls back to the first image of any view.
    pub fn key_image(&self) -> Option<&ImageRef> {
        self.images
            .iter()
            .find(|i| i.view == ViewPosition::FrontalAp)
            .or_else(|| {
                self.images
                    .iter()
                    .find(|i| i.view == ViewPosition::FrontalPa)
            })
            .or_else(|| self.images.first())
    }

    pub fn target_text(&self) -> String {
        self.sections.target_text()
    }
}

/// Which of the two instruction templates applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    FindingsImpression,
    FindingsOnly,
}

/// Prior-study context attached to a prompt: the prior images plus the
/// prior report text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorStudy {
    pub images: Vec<ImageRef>,
    pub report_text: String,
}

impl PriorStudy {
    pub fn from_record(record: &StudyRecord) -> Self {
        PriorStudy {
            images: record.images.clone(),
            report_text: record.target_text(),
        }
    }
}

/// A fully rendered prompt paired with its ground-truth target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptInstance {
    pub task_kind: TaskKind,
    /// Context block: indication, comparison, and prior-report lines.
    pub context: String,
    pub current_images: Vec<ImageRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<PriorStudy>,
    /// Concatenation of the available ground-truth sections.
    pub target: String,
    /// The instruction template with `{input}` filled in.
    pub text: String,
}

/// Instruction template used when the study has an impression section.
pub const FINDINGS_IMPRESSION_TEMPLATE: &str = "This is a radiology report generation task. Here is the context: {input}\nGiven the image and the context, provide the report in the following format:\nFindings: [write the findings]\nImpression: [write the impression]\nNow write the report in the format above.";

/// Instruction template used when the study has findings but no impression.
pub const FINDINGS_ONLY_TEMPLATE: &str = "This is a radiology report generation task. Here is the context: {input}\nGiven the image and the context, provide the findings in the following format:\nFindings: [write the findings]\nNow write the report in the format above.";

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

const SECTION_HEADERS: [&str; 4] = ["indication", "comparison", "findings", "impression"];

/// If `line` starts with a section header (case-insensitive, anchored at the
/// start of the line, optional spaces before a required colon), return the
/// header index and the text following the colon.
fn match_header(line: &str) -> Option<(usize, &str)> {
    for (idx, header) in SECTION_HEADERS.iter().enumerate() {
        if line.len() >= header.len() && line[..header.len()].eq_ignore_ascii_case(header) {
            let rest = &line[header.len()..];
            let after = rest.trim_start_matches([' ', '\t']);
            if let Some(content) = after.strip_prefix(':') {
                return Some((idx, content));
            }
        }
    }
    None
}

/// Split raw report text into sections.
///
/// Headers are matched case-insensitively at line start and require a
/// trailing colon. Text between a header and the next header (or end of
/// input) belongs to that section; unheaded leading text is discarded.
/// Sections are trimmed; a section that is empty after trimming is absent.
/// If a header repeats, the last occurrence wins. Never fails: input with
/// no recognizable headers yields all-absent sections.
pub fn parse_sections(raw_report: &str) -> ReportSections {
    let mut collected: [Option<Vec<&str>>; 4] = [None, None, None, None];
    let mut current: Option<usize> = None;
    for line in raw_report.lines() {
        if let Some((idx, content)) = match_header(line) {
            collected[idx] = Some(vec![content]);
            current = Some(idx);
        } else if let Some(idx) = current {
            if let Some(buf) = collected[idx].as_mut() {
                buf.push(line);
            }
        }
    }
    let mut take = |idx: usize| -> Option<String> {
        collected[idx].take().and_then(|lines| {
            let text = lines.join("\n");
            let text = text.trim();
            if text.is_empty() {
                None
            } else {
                Some(text.to_string())
            }
        })
    };
    ReportSections {
        indication: take(0),
        comparison: take(1),
        findings: take(2),
        impression: take(3),
    }
}

/// Drop records whose findings and impression are both absent. Records with
/// exactly one of the two are retained. Input order is preserved.
pub fn filter_corpus(records: Vec<StudyRecord>) -> Vec<StudyRecord> {
    records
        .into_iter()
        .filter(|r| !r.sections.is_report_empty())
        .collect()
}

/// Build the prompt for one study. Fails if the study has neither findings
/// nor impression (it should have been removed by [`filter_corpus`]).
pub fn build_prompt(
    record: &StudyRecord,
    prior: Option<PriorStudy>,
) -> Result<PromptInstance, CorpusError> {
    if record.sections.is_report_empty() {
        return Err(CorpusError::EmptyReport {
            study_id: record.study_id.clone(),
        });
    }
    let task_kind = if record.sections.impression.is_some() {
        TaskKind::FindingsImpression
    } else {
        TaskKind::FindingsOnly
    };

    let mut parts = Vec::new();
    if let Some(ind) = &record.sections.indication {
        parts.push(format!("Indication: {ind}"));
    }
    if let Some(cmp) = &record.sections.comparison {
        parts.push(format!("Comparison: {cmp}"));
    }
    if let Some(p) = &prior {
        parts.push(format!("Prior study report:\n{}", p.report_text));
    }
    let context = parts.join("\n");

    let placeholders = vec!["<image>"; record.images.len()].join(" ");
    let input = match (placeholders.is_empty(), context.is_empty()) {
        (true, true) => String::new(),
        (true, false) => context.clone(),
        (false, true) => placeholders,
        (false, false) => format!("{placeholders}\n{context}"),
    };

    let template = match task_kind {
        TaskKind::FindingsImpression => FINDINGS_IMPRESSION_TEMPLATE,
        TaskKind::FindingsOnly => FINDINGS_ONLY_TEMPLATE,
    };
    let text = template.replace("{input}", &input);

    Ok(PromptInstance {
        task_kind,
        context,
        current_images: record.images.clone(),
        prior,
        target: record.target_text(),
        text,
    })
}

fn chronological(records: &[StudyRecord]) -> Result<Vec<usize>, CorpusError> {
    if let Some(first) = records.first() {
        for r in records {
            if r.patient_id != first.patient_id {
                return Err(CorpusError::MixedPatients {
                    a: first.patient_id.clone(),
                    b: r.patient_id.clone(),
                });
            }
        }
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[a].chrono_key().cmp(&records[b].chrono_key()));
    Ok(order)
}

/// For each study of one patient, find the most recent earlier study that
/// has at least one frontal image and a non-empty report. The earliest
/// eligible-or-not study maps to `None`.
pub fn link_prior(
    records: &[StudyRecord],
) -> Result<BTreeMap<String, Option<String>>, CorpusError> {
    let order = chronological(records)?;
    let mut map = BTreeMap::new();
    for (pos, &idx) in order.iter().enumerate() {
        let mut prior = None;
        for &cand in order[..pos].iter().rev() {
            let c = &records[cand];
            if c.has_frontal_image() && !c.sections.is_report_empty() {
                prior = Some(c.study_id.clone());
                break;
            }
        }
        map.insert(records[idx].study_id.clone(), prior);
    }
    Ok(map)
}

/// 1-based chronological rank of each study within one patient's history.
pub fn encounter_index(records: &[StudyRecord]) -> Result<BTreeMap<String, u32>, CorpusError> {
    let order = chronological(records)?;
    Ok(order
        .iter()
        .enumerate()
        .map(|(pos, &idx)| (records[idx].study_id.clone(), pos as u32 + 1))
        .collect())
}

/// Evaluation bucket for encounter indices: 1, 2, 3, 4, or 5+.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EncounterBucket {
    #[serde(rename = "1")]
    First,
    #[serde(rename = "2")]
    Second,
    #[serde(rename = "3")]
    Third,
    #[serde(rename = "4")]
    Fourth,
    #[serde(rename = "5+")]
    FifthPlus,
}

impl EncounterBucket {
    pub fn from_index(index: u32) -> Self {
        match index {
            0 | 1 => EncounterBucket::First,
            2 => EncounterBucket::Second,
            3 => EncounterBucket::Third,
            4 => EncounterBucket::Fourth,
            _ => EncounterBucket::FifthPlus,
        }
    }

    pub fn all() -> [EncounterBucket; 5] {
        [
            EncounterBucket::First,
            EncounterBucket::Second,
            EncounterBucket::Third,
            EncounterBucket::Fourth,
            EncounterBucket::FifthPlus,
        ]
    }

    pub fn label(self) -> &'static str {
        match self {
            EncounterBucket::First => "1",
            EncounterBucket::Second => "2",
            EncounterBucket::Third => "3",
            EncounterBucket::Fourth => "4",
            EncounterBucket::FifthPlus => "5+",
        }
    }
}

impl fmt::Display for EncounterBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Deterministic seeded shuffle; the first `n` records become the
/// validation set, the rest the training set. Returns `(train, validation)`.
/// The split is record-level, not patient-level.
pub fn split_validation(
    records: Vec<StudyRecord>,
    n: usize,
    seed: u64,
) -> Result<(Vec<StudyRecord>, Vec<StudyRecord>), CorpusError> {
    if n > records.len() {
        return Err(CorpusError::SplitTooLarge {
            n,
            len: records.len(),
        });
    }
    let mut records = records;
    let mut rng = rng::seeded(seed);
    rng::shuffle(&mut rng, &mut records);
    let train = records.split_off(n);
    Ok((train, records))
}

// ---------------------------------------------------------------------------
// JSONL i/o
// ---------------------------------------------------------------------------

/// Summary counters produced by [`load_corpus`] plus filtering.
#[derive(Debug, Clone, Default, Serialize)]
pub struct IngestSummary {
    pub read: usize,
    pub kept: usize,
    pub dropped_empty: usize,
    pub findings_only: usize,
    pub impression_only: usize,
    pub both_sections: usize,
}

/// Read one `StudyRecord` per line, normalizing sections and validating
/// study-id uniqueness. Blank lines are skipped. Errors carry 1-based line
/// numbers.
pub fn load_corpus<R: BufRead>(reader: R) -> Result<Vec<StudyRecord>, CorpusError> {
    let mut records = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut record: StudyRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedLine {
                line: lineno,
                message: e.to_string(),
            })?;
        record.sections = record.sections.normalized();
        if !seen.insert(record.study_id.clone()) {
            return Err(CorpusError::DuplicateStudyId {
                line: lineno,
                study_id: record.study_id,
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// Write records back out as JSON-Lines.
pub fn write_corpus<W: Write>(mut writer: W, records: &[StudyRecord]) -> Result<(), CorpusError> {
    for record in records {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

/// Group records by patient, preserving first-seen patient order.
pub fn group_by_patient(records: &[StudyRecord]) -> Vec<(String, Vec<&StudyRecord>)> {
    let mut order: Vec<String> = Vec::new();
    let mut map: BTreeMap<String, Vec<&StudyRecord>> = BTreeMap::new();
    for r in records {
        if !map.contains_key(&r.patient_id) {
            order.push(r.patient_id.clone());
        }
        map.entry(r.patient_id.clone()).or_default().push(r);
    }
    order
        .into_iter()
        .map(|p| {
            let v = map.remove(&p).unwrap();
            (p, v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(study_id: &str, patient: &str, ts: &str) -> StudyRecord {
        StudyRecord {
            study_id: study_id.to_string(),
            patient_id: patient.to_string(),
            timestamp: Timestamp::parse(ts).unwrap(),
            images: vec![ImageRef::new(
                format!("img/{study_id}.png"),
                ViewPosition::FrontalPa,
            )],
            sections: ReportSections {
                indication: None,
                comparison: None,
                findings: Some(format!("findings for {study_id}")),
                impression: Some(format!("impression for {study_id}")),
            },
            demographics: Demographics::default(),
        }
    }

    #[test]
    fn parse_sections_direct_headers() {
        let got = parse_sections("FINDINGS: Clear lungs.\nIMPRESSION: No acute disease.");
        assert_eq!(got.findings.as_deref(), Some("Clear lungs."));
        assert_eq!(got.impression.as_deref(), Some("No acute disease."));
        assert_eq!(got.indication, None);
        assert_eq!(got.comparison, None);
    }

    #[test]
    fn parse_sections_empty_input() {
        assert_eq!(parse_sections(""), ReportSections::default());
    }

    #[test]
    fn parse_sections_mixed_case_and_missing_colon() {
        // Hand-traced: "Findings:" and "impression:" are headers; the third
        // line lacks a colon so it is body text of the impression section.
        let got = parse_sections("Findings: a\nimpression: b\nIMPRESSION ignored-no-colon");
        assert_eq!(got.findings.as_deref(), Some("a"));
        assert_eq!(
            got.impression.as_deref(),
            Some("b\nIMPRESSION ignored-no-colon")
        );
    }

    #[test]
    fn parse_sections_discards_unheaded_lead() {
        let got = parse_sections("free text preamble\nFindings: ok");
        assert_eq!(got.findings.as_deref(), Some("ok"));
        assert_eq!(got.impression, None);
    }

    #[test]
    fn parse_sections_multiline_and_trim() {
        let got = parse_sections("FINDINGS:\n  line one\n  line two  \nIMPRESSION:   ");
        assert_eq!(got.findings.as_deref(), Some("line one\n  line two"));
        assert_eq!(got.impression, None);
    }

    #[test]
    fn parse_sections_header_requires_colon_after_optional_spaces() {
        let got = parse_sections("Findings : spaced colon");
        assert_eq!(got.findings.as_deref(), Some("spaced colon"));
    }

    #[test]
    fn parse_sections_idempotent_on_reserialized_output() {
        let raw = "Indication: cough\nFindings: Clear.\nImpression: Normal.";
        let once = parse_sections(raw);
        let twice = parse_sections(&once.to_report_text());
        assert_eq!(once, twice);
    }

    #[test]
    fn filter_drops_only_fully_empty_reports() {
        let mut both_absent = record("s1", "p", "2024-01-01");
        both_absent.sections.findings = None;
        both_absent.sections.impression = None;
        let mut findings_only = record("s2", "p", "2024-01-02");
        findings_only.sections.impression = None;
        let kept = filter_corpus(vec![both_absent, findings_only.clone()]);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].study_id, "s2");
        assert!(filter_corpus(vec![]).is_empty());
    }

    #[test]
    fn build_prompt_selects_template_by_impression_presence() {
        let rec = record("s1", "p", "2024-01-01");
        let both = build_prompt(&rec, None).unwrap();
        assert_eq!(both.task_kind, TaskKind::FindingsImpression);
        assert!(both.text.contains("Findings: [write the findings]"));
        assert!(both.text.contains("Impression: [write the impression]"));

        let mut fo = record("s2", "p", "2024-01-01");
        fo.sections.impression = None;
        let prompt = build_prompt(&fo, None).unwrap();
        assert_eq!(prompt.task_kind, TaskKind::FindingsOnly);
        assert!(prompt.text.contains("Findings: [write the findings]"));
        assert!(!prompt.text.contains("Impression: [write the impression]"));
    }

    #[test]
    fn build_prompt_context_includes_indication_once() {
        let mut rec = record("s1", "p", "2024-01-01");
        rec.sections.indication = Some("cough".to_string());
        let prompt = build_prompt(&rec, None).unwrap();
        assert_eq!(prompt.text.matches("cough").count(), 1);
        assert!(prompt.context.contains("Indication: cough"));
    }

    #[test]
    fn build_prompt_rejects_empty_report() {
        let mut rec = record("s1", "p", "2024-01-01");
        rec.sections.findings = None;
        rec.sections.impression = None;
        assert!(matches!(
            build_prompt(&rec, None),
            Err(CorpusError::EmptyReport { .. })
        ));
    }

    #[test]
    fn build_prompt_includes_prior_report() {
        let rec = record("s2", "p", "2024-02-01");
        let prior = PriorStudy::from_record(&record("s1", "p", "2024-01-01"));
        let prompt = build_prompt(&rec, Some(prior)).unwrap();
        assert!(prompt.context.contains("Prior study report:"));
        assert!(prompt.context.contains("findings for s1"));
    }

    #[test]
    fn target_orders_findings_then_impression() {
        let rec = record("s1", "p", "2024-01-01");
        assert_eq!(
            rec.target_text(),
            "Findings: findings for s1\nImpression: impression for s1"
        );
    }

    #[test]
    fn link_prior_chains_chronologically() {
        let records = vec![
            record("t1", "p", "2024-01-01"),
            record("t2", "p", "2024-02-01"),
            record("t3", "p", "2024-03-01"),
        ];
        let map = link_prior(&records).unwrap();
        assert_eq!(map["t1"], None);
        assert_eq!(map["t2"], Some("t1".to_string()));
        assert_eq!(map["t3"], Some("t2".to_string()));
    }

    #[test]
    fn link_prior_skips_lateral_only_studies() {
        // Hand-traced eligibility: t2 has only a lateral image, so t3's
        // prior falls through to t1.
        let mut t2 = record("t2", "p", "2024-02-01");
        t2.images = vec![ImageRef::new("img/t2.png", ViewPosition::Lateral)];
        let records = vec![
            record("t1", "p", "2024-01-01"),
            t2,
            record("t3", "p", "2024-03-01"),
        ];
        let map = link_prior(&records).unwrap();
        assert_eq!(map["t3"], Some("t1".to_string()));
        // t2 itself still gets t1 as its prior.
        assert_eq!(map["t2"], Some("t1".to_string()));
    }

    #[test]
    fn link_prior_single_study_maps_to_none() {
        let map = link_prior(&[record("only", "p", "2024-01-01")]).unwrap();
        assert_eq!(map["only"], None);
    }

    #[test]
    fn link_prior_skips_empty_report_studies() {
        let mut t2 = record("t2", "p", "2024-02-01");
        t2.sections.findings = None;
        t2.sections.impression = None;
        let records = vec![
            record("t1", "p", "2024-01-01"),
            t2,
            record("t3", "p", "2024-03-01"),
        ];
        let map = link_prior(&records).unwrap();
        assert_eq!(map["t3"], Some("t1".to_string()));
    }

    #[test]
    fn link_prior_rejects_mixed_patients() {
        let records = vec![
            record("a", "p1", "2024-01-01"),
            record("b", "p2", "2024-01-02"),
        ];
        assert!(matches!(
            link_prior(&records),
            Err(CorpusError::MixedPatients { .. })
        ));
    }

    #[test]
    fn encounter_index_ranks_chronologically() {
        let records = vec![
            record("b", "p", "2024-02-01"),
            record("a", "p", "2024-01-01"),
            record("c", "p", "2024-03-01"),
        ];
        let idx = encounter_index(&records).unwrap();
        assert_eq!(idx["a"], 1);
        assert_eq!(idx["b"], 2);
        assert_eq!(idx["c"], 3);
    }

    #[test]
    fn encounter_bucket_caps_at_five_plus() {
        assert_eq!(EncounterBucket::from_index(7), EncounterBucket::FifthPlus);
        assert_eq!(EncounterBucket::from_index(4).label(), "4");
        assert_eq!(EncounterBucket::from_index(5).label(), "5+");
    }

    #[test]
    fn encounter_index_tie_break_is_permutation_invariant() {
        // Two studies share a timestamp; study_id breaks the tie no matter
        // the input order.
        let base = [
            record("x2", "p", "2024-01-01T08:00:00Z"),
            record("x1", "p", "2024-01-01T08:00:00Z"),
            record("x3", "p", "2024-01-02"),
        ];
        let expected = encounter_index(&base).unwrap();
        assert_eq!(expected["x1"], 1);
        assert_eq!(expected["x2"], 2);
        let mut permuted = base.to_vec();
        permuted.reverse();
        assert_eq!(encounter_index(&permuted).unwrap(), expected);
    }

    #[test]
    fn split_is_deterministic() {
        let records: Vec<StudyRecord> = (0..40)
            .map(|i| record(&format!("s{i:02}"), "p", "2024-01-01"))
            .collect();
        let (train_a, val_a) = split_validation(records.clone(), 16, 7).unwrap();
        let (train_b, val_b) = split_validation(records.clone(), 16, 7).unwrap();
        let ids = |v: &[StudyRecord]| v.iter().map(|r| r.study_id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&train_a), ids(&train_b));
        assert_eq!(ids(&val_a), ids(&val_b));
        assert_eq!(train_a.len(), 24);
        assert_eq!(val_a.len(), 16);

        let (train, val) = split_validation(records.clone(), 0, 7).unwrap();
        assert_eq!(train.len(), 40);
        assert!(val.is_empty());

        let (train, val) = split_validation(records.clone(), 40, 7).unwrap();
        assert!(train.is_empty());
        assert_eq!(val.len(), 40);

        assert!(matches!(
            split_validation(records, 41, 7),
            Err(CorpusError::SplitTooLarge { .. })
        ));
    }

    #[test]
    fn timestamp_parsing_and_ordering() {
        let epoch = Timestamp::parse("1970-01-01T00:00:00Z").unwrap();
        assert_eq!(epoch.epoch_nanos(), 0);
        let date_only = Timestamp::parse("1970-01-02").unwrap();
        assert_eq!(date_only.epoch_nanos(), 86_400 * 1_000_000_000);
        let offset = Timestamp::parse("2024-01-01T01:00:00+01:00").unwrap();
        let utc = Timestamp::parse("2024-01-01T00:00:00Z").unwrap();
        assert_eq!(offset, utc);
        assert!(Timestamp::parse("2024-02-29").is_some());
        assert!(Timestamp::parse("2023-02-29").is_none());
        assert!(Timestamp::parse("not a date").is_none());
        assert!(Timestamp::parse("2024-13-01").is_none());
        let early = Timestamp::parse("2024-01-01T23:59:59Z").unwrap();
        let later = Timestamp::parse("2024-01-02").unwrap();
        assert!(early < later);
        let frac = Timestamp::parse("2024-01-01T00:00:00.250Z").unwrap();
        assert!(frac > utc);
    }

    #[test]
    fn jsonl_roundtrip_normalizes_sections() {
        let line = r#"{"study_id":"s1","patient_id":"p1","timestamp":"2024-03-04T10:00:00Z","images":[{"uri":"img/1.png","view":"frontal_ap"}],"report":{"findings":"  Clear lungs.  ","impression":"   "},"demographics":{"gender":"F"}}"#;
        let records = load_corpus(line.as_bytes()).unwrap();
        assert_eq!(records.len(), 1);
        let r = &records[0];
        assert_eq!(r.sections.findings.as_deref(), Some("Clear lungs."));
        assert_eq!(r.sections.impression, None);
        assert_eq!(r.images[0].target_resolution, (512, 512));
        assert_eq!(r.demographics.gender.as_deref(), Some("F"));

        let mut out = Vec::new();
        write_corpus(&mut out, &records).unwrap();
        let reread = load_corpus(out.as_slice()).unwrap();
        assert_eq!(reread[0].sections, r.sections);
        assert_eq!(reread[0].timestamp, r.timestamp);
    }

    #[test]
    fn report_field_accepts_raw_text() {
        let line = r#"{"study_id":"s1","patient_id":"p1","timestamp":"2024-01-01","report":"FINDINGS: Clear.\nIMPRESSION: Normal."}"#;
        let records = load_corpus(line.as_bytes()).unwrap();
        assert_eq!(records[0].sections.findings.as_deref(), Some("Clear."));
        assert_eq!(records[0].sections.impression.as_deref(), Some("Normal."));
    }

    #[test]
    fn load_corpus_reports_line_numbers() {
        let text =
            "{\"study_id\":\"a\",\"patient_id\":\"p\",\"timestamp\":\"2024-01-01\"}\nnot json\n";
        match load_corpus(text.as_bytes()) {
            Err(CorpusError::MalformedLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected malformed line, got {other:?}"),
        }
    }

    #[test]
    fn load_corpus_rejects_bad_timestamp_with_line() {
        let text = r#"{"study_id":"a","patient_id":"p","timestamp":"2024-99-01"}"#;
        match load_corpus(text.as_bytes()) {
            Err(CorpusError::MalformedLine { line, message }) => {
                assert_eq!(line, 1);
                assert!(message.contains("timestamp"));
            }
            other => panic!("expected malformed line, got {other:?}"),
        }
    }

    #[test]
    fn load_corpus_rejects_duplicate_study_ids() {
        let a = r#"{"study_id":"a","patient_id":"p","timestamp":"2024-01-01"}"#;
        let text = format!("{a}\n{a}\n");
        assert!(matches!(
            load_corpus(text.as_bytes()),
            Err(CorpusError::DuplicateStudyId { line: 2, .. })
        ));
    }

    #[test]
    fn key_image_prefers_ap_over_pa() {
        let mut rec = record("s", "p", "2024-01-01");
        rec.images = vec![
            ImageRef::new("lat.png", ViewPosition::Lateral),
            ImageRef::new("pa.png", ViewPosition::FrontalPa),
            ImageRef::new("ap.png", ViewPosition::FrontalAp),
        ];
        assert_eq!(rec.key_image().unwrap().uri, "ap.png");
        rec.images.pop();
        assert_eq!(rec.key_image().unwrap().uri, "pa.png");
        rec.images = vec![ImageRef::new("lat.png", ViewPosition::Lateral)];
        assert_eq!(rec.key_image().unwrap().uri, "lat.png");
    }
}
