//! End-to-end evaluation harness: greedy generation through a backend,
//! full metric scoring with bootstrap intervals, composite reporting, the
//! copy-prior baseline, stratified tables, and condition-level F1.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    build_prompt, encounter_index, group_by_patient, link_prior, CorpusError, Demographics,
    EncounterBucket, PriorStudy, StudyRecord,
};
use crate::judge::{JudgeError, ReportJudge, TemporalCategory, TextBackend};
use crate::metrics::labeler::{label_pathologies, LabelLexicon};
use crate::metrics::{
    bleu2, composite, extract_entities, radgraph_f1, semb_score, soft_token_f1,
    CompositeCoefficients, MetricVector, MetricsError, PatternSet, TokenEmbedder,
};
use crate::rng;

/// Errors raised by the evaluation harness.
#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error("unknown stratification axis {0:?}")]
    UnknownAxis(String),
    #[error("no pairs to score")]
    NoPairs,
    #[error("axis {0:?} requires a judge")]
    JudgeRequired(String),
    #[error("backend failed after {} completed pairs: {message}", .completed.len())]
    Backend {
        completed: Vec<EvalPair>,
        message: String,
    },
}

/// One prediction/reference pair with its stratification keys.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalPair {
    pub study_id: String,
    pub prediction: String,
    pub reference: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_reference: Option<String>,
    pub encounter_bucket: EncounterBucket,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temporal_category: Option<TemporalCategory>,
    #[serde(default, skip_serializing_if = "Demographics::is_empty")]
    pub demographics: Demographics,
    #[serde(default)]
    pub truncated: bool,
}

/// Which part of the texts to score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionScope {
    /// Score the full generated target against the full reference target.
    #[default]
    Full,
    /// Score only the findings sections extracted from each side.
    Findings,
}

/// Metric components, coefficients, and bootstrap settings.
pub struct ScoringConfig {
    pub lexicon: LabelLexicon,
    pub patterns: PatternSet,
    pub coefficients: CompositeCoefficients,
    pub bootstrap_samples: usize,
    pub bootstrap_seed: u64,
    pub scope: SectionScope,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            lexicon: LabelLexicon::default_14(),
            patterns: PatternSet::default_chest(),
            coefficients: CompositeCoefficients::default().with_reciprocal(true),
            bootstrap_samples: 1000,
            bootstrap_seed: 0xb007,
            scope: SectionScope::Full,
        }
    }
}

/// Mean with a seeded percentile-bootstrap 95% interval.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

fn bootstrap(values: &[f64], samples: usize, seed: u64) -> Aggregate {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 || samples == 0 {
        return Aggregate {
            mean,
            ci_low: mean,
            ci_high: mean,
        };
    }
    let mut rng = rng::seeded(seed);
    let mut means: Vec<f64> = (0..samples)
        .map(|_| {
            let total: f64 = (0..n).map(|_| values[rng::index(&mut rng, n)]).sum();
            total / n as f64
        })
        .collect();
    means.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = ((samples as f64) * 0.025).floor() as usize;
    let hi = (((samples as f64) * 0.975).ceil() as usize).min(samples) - 1;
    Aggregate {
        mean,
        ci_low: means[lo],
        ci_high: means[hi],
    }
}

/// Histogram of judge error counts over the buckets <=1, 2, 3, >=4.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorHistogram {
    pub le1: usize,
    pub two: usize,
    pub three: usize,
    pub ge4: usize,
}

impl ErrorHistogram {
    pub fn from_counts<I: IntoIterator<Item = u32>>(counts: I) -> Self {
        let mut h = ErrorHistogram::default();
        for c in counts {
            match c {
                0 | 1 => h.le1 += 1,
                2 => h.two += 1,
                3 => h.three += 1,
                _ => h.ge4 += 1,
            }
        }
        h
    }

    pub fn total(&self) -> usize {
        self.le1 + self.two + self.three + self.ge4
    }
}

/// Per-pair metric values plus the composite.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairScore {
    pub study_id: String,
    pub metrics: MetricVector,
    pub composite_raw: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub composite_reported: Option<f64>,
}

/// Aggregated means over a pair set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricSummary {
    pub n: usize,
    pub bleu2: Aggregate,
    pub soft_f1: Aggregate,
    pub semb: Aggregate,
    pub radgraph_f1: Aggregate,
    pub composite_raw: Aggregate,
    /// Mean of the per-pair reported composites (reciprocal mode skips
    /// pairs with non-positive raw values, counted below).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub composite_reported: Option<Aggregate>,
    pub nonpositive_composites: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_errors: Option<Aggregate>,
}

/// The full machine-readable report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub summary: MetricSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_histogram: Option<ErrorHistogram>,
    /// Set when judge scoring failed permanently; base metrics are still
    /// produced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_failure: Option<String>,
    pub per_pair: Vec<PairScore>,
}

fn scope_text(text: &str, scope: SectionScope) -> String {
    match scope {
        SectionScope::Full => text.to_string(),
        SectionScope::Findings => crate::corpus::parse_sections(text)
            .findings
            .unwrap_or_default(),
    }
}

/// Metric vector of one prediction/reference pair (judge fields excluded).
pub fn score_pair_texts(
    prediction: &str,
    reference: &str,
    scoring: &ScoringConfig,
    embedder: &dyn TokenEmbedder,
) -> Result<MetricVector, MetricsError> {
    let prediction = scope_text(prediction, scoring.scope);
    let reference = scope_text(reference, scoring.scope);
    let soft = soft_token_f1(&prediction, &reference, embedder)?;
    let cand_labels = label_pathologies(&prediction, &scoring.lexicon)?;
    let ref_labels = label_pathologies(&reference, &scoring.lexicon)?;
    let semb = semb_score(&cand_labels, &ref_labels)?;
    let cand_graph = extract_entities(&prediction, &scoring.patterns);
    let ref_graph = extract_entities(&reference, &scoring.patterns);
    Ok(MetricVector::new(
        bleu2(&prediction, &reference),
        soft.f1,
        semb,
        radgraph_f1(&cand_graph, &ref_graph),
    ))
}

/// Score a pair set: per-pair metric vectors (judge errors included when a
/// judge is supplied), means with bootstrap intervals, the composite and
/// its reported form, and the error-count histogram. A permanent judge
/// failure drops the judge-dependent fields only.
pub fn score_pairs(
    pairs: &[EvalPair],
    scoring: &ScoringConfig,
    embedder: &dyn TokenEmbedder,
    judge: Option<&dyn ReportJudge>,
) -> Result<EvalReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::NoPairs);
    }
    // Deterministic fold order regardless of input order.
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| pairs[a].study_id.cmp(&pairs[b].study_id));

    let mut per_pair = Vec::with_capacity(pairs.len());
    let mut judge_failure: Option<String> = None;
    let mut judge_alive = judge.is_some();
    for &idx in &order {
        let pair = &pairs[idx];
        let mut mv = score_pair_texts(&pair.prediction, &pair.reference, scoring, embedder)?;
        if judge_alive {
            let judge = judge.expect("judge_alive implies judge");
            match judge.count_errors(&pair.prediction, &pair.reference) {
                Ok(verdict) => mv = mv.with_judge_errors(verdict.error_count),
                Err(e) => {
                    judge_failure = Some(e.to_string());
                    judge_alive = false;
                }
            }
        }
        let score = composite(&mv, &scoring.coefficients);
        let (raw, reported) = match score {
            Ok(s) => (s.raw, Some(s.reported)),
            Err(MetricsError::NonPositiveComposite { raw }) => (raw, None),
            Err(e) => return Err(e.into()),
        };
        per_pair.push(PairScore {
            study_id: pair.study_id.clone(),
            metrics: mv,
            composite_raw: raw,
            composite_reported: reported,
        });
    }
    // A judge failure midway invalidates the series: errors are either
    // present for every pair or absent from the report.
    if judge_failure.is_some() {
        for score in &mut per_pair {
            score.metrics.judge_errors = None;
        }
    }

    let summary = summarize(&per_pair, scoring);
    let error_counts: Vec<u32> = per_pair
        .iter()
        .filter_map(|s| s.metrics.judge_errors)
        .collect();
    let error_histogram = if error_counts.is_empty() {
        None
    } else {
        Some(ErrorHistogram::from_counts(error_counts))
    };
    Ok(EvalReport {
        summary,
        error_histogram,
        judge_failure,
        per_pair,
    })
}

fn summarize(per_pair: &[PairScore], scoring: &ScoringConfig) -> MetricSummary {
    let seed = scoring.bootstrap_seed;
    let samples = scoring.bootstrap_samples;
    let agg = |f: &dyn Fn(&PairScore) -> f64, stream: u64| {
        let values: Vec<f64> = per_pair.iter().map(f).collect();
        bootstrap(&values, samples, rng::splitmix64(seed ^ stream))
    };
    let reported: Vec<f64> = per_pair
        .iter()
        .filter_map(|s| s.composite_reported)
        .collect();
    let nonpositive = per_pair.len() - reported.len();
    let errors: Vec<f64> = per_pair
        .iter()
        .filter_map(|s| s.metrics.judge_errors.map(f64::from))
        .collect();
    MetricSummary {
        n: per_pair.len(),
        bleu2: agg(&|s| s.metrics.bleu2, 1),
        soft_f1: agg(&|s| s.metrics.soft_f1, 2),
        semb: agg(&|s| s.metrics.semb, 3),
        radgraph_f1: agg(&|s| s.metrics.radgraph_f1, 4),
        composite_raw: agg(&|s| s.composite_raw, 5),
        composite_reported: if reported.is_empty() || !scoring.coefficients.reciprocal {
            if scoring.coefficients.reciprocal {
                None
            } else {
                // Raw and reported coincide without reciprocal mode.
                Some(agg(&|s| s.composite_raw, 6))
            }
        } else {
            Some(bootstrap(&reported, samples, rng::splitmix64(seed ^ 6)))
        },
        nonpositive_composites: nonpositive,
        judge_errors: if errors.is_empty() {
            None
        } else {
            Some(bootstrap(&errors, samples, rng::splitmix64(seed ^ 7)))
        },
    }
}

/// Build prompts (prior context included only when `use_prior` is set),
/// generate at temperature 0 with only the key image attached, and pair
/// predictions with references. A backend failure aborts with the pairs
/// completed so far carried in the error.
pub fn run_inference(
    records: &[StudyRecord],
    backend: &dyn TextBackend,
    use_prior: bool,
    max_tokens: usize,
) -> Result<Vec<EvalPair>, EvalError> {
    let linkage = Linkage::build(records)?;
    let mut pairs = Vec::with_capacity(records.len());
    for record in records {
        let prior_record = linkage.prior_of(record);
        let prompt_prior = if use_prior {
            prior_record.map(PriorStudy::from_record)
        } else {
            None
        };
        // Only the designated key image rides along with the prompt.
        let mut keyed = record.clone();
        keyed.images = keyed.key_image().cloned().into_iter().collect();
        let prompt = build_prompt(&keyed, prompt_prior).map_err(EvalError::Corpus)?;
        let generation = match backend.generate(&prompt, 0.0, None, max_tokens) {
            Ok(g) => g,
            Err(e) => {
                return Err(EvalError::Backend {
                    completed: pairs,
                    message: e.to_string(),
                })
            }
        };
        pairs.push(EvalPair {
            study_id: record.study_id.clone(),
            prediction: generation.text,
            reference: record.target_text(),
            prior_reference: prior_record.map(|p| p.target_text()),
            encounter_bucket: EncounterBucket::from_index(linkage.encounter_of(record)),
            temporal_category: None,
            demographics: record.demographics.clone(),
            truncated: generation.truncated,
        });
    }
    Ok(pairs)
}

/// Per-patient prior links and encounter indices over a full corpus.
struct Linkage<'a> {
    by_id: BTreeMap<&'a str, &'a StudyRecord>,
    priors: BTreeMap<String, Option<String>>,
    encounters: BTreeMap<String, u32>,
}

impl<'a> Linkage<'a> {
    fn build(records: &'a [StudyRecord]) -> Result<Self, CorpusError> {
        let mut priors = BTreeMap::new();
        let mut encounters = BTreeMap::new();
        for (_, group) in group_by_patient(records) {
            let owned: Vec<StudyRecord> = group.iter().map(|r| (*r).clone()).collect();
            priors.extend(link_prior(&owned)?);
            encounters.extend(encounter_index(&owned)?);
        }
        Ok(Linkage {
            by_id: records.iter().map(|r| (r.study_id.as_str(), r)).collect(),
            priors,
            encounters,
        })
    }

    fn prior_of(&self, record: &StudyRecord) -> Option<&'a StudyRecord> {
        self.priors
            .get(&record.study_id)
            .and_then(|p| p.as_ref())
            .and_then(|id| self.by_id.get(id.as_str()).copied())
    }

    fn encounter_of(&self, record: &StudyRecord) -> u32 {
        self.encounters.get(&record.study_id).copied().unwrap_or(1)
    }
}

/// The copy-prior baseline: the prior report text, byte for byte, is the
/// prediction. Studies without a prior are excluded; the exclusion count
/// is returned alongside.
pub fn copy_prior_baseline(records: &[StudyRecord]) -> Result<(Vec<EvalPair>, usize), EvalError> {
    let linkage = Linkage::build(records)?;
    let mut pairs = Vec::new();
    let mut excluded = 0usize;
    for record in records {
        match linkage.prior_of(record) {
            Some(prior) => {
                let prior_text = prior.target_text();
                pairs.push(EvalPair {
                    study_id: record.study_id.clone(),
                    prediction: prior_text.clone(),
                    reference: record.target_text(),
                    prior_reference: Some(prior_text),
                    encounter_bucket: EncounterBucket::from_index(linkage.encounter_of(record)),
                    temporal_category: None,
                    demographics: record.demographics.clone(),
                    truncated: false,
                });
            }
            None => excluded += 1,
        }
    }
    Ok((pairs, excluded))
}

/// Stratification axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StratifyAxis {
    Encounter,
    Temporal,
    Gender,
    AgeBand,
    Race,
}

impl StratifyAxis {
    pub fn name(self) -> &'static str {
        match self {
            StratifyAxis::Encounter => "encounter",
            StratifyAxis::Temporal => "temporal",
            StratifyAxis::Gender => "gender",
            StratifyAxis::AgeBand => "age_band",
            StratifyAxis::Race => "race",
        }
    }
}

impl FromStr for StratifyAxis {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, EvalError> {
        match s {
            "encounter" => Ok(StratifyAxis::Encounter),
            "temporal" => Ok(StratifyAxis::Temporal),
            "gender" => Ok(StratifyAxis::Gender),
            "age_band" => Ok(StratifyAxis::AgeBand),
            "race" => Ok(StratifyAxis::Race),
            other => Err(EvalError::UnknownAxis(other.to_string())),
        }
    }
}

/// One stratum: key, membership count, and (when non-empty) the summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stratum {
    pub key: String,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<MetricSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StratifiedTable {
    pub axis: String,
    pub strata: Vec<Stratum>,
    /// Pairs lacking the axis key (not silently dropped).
    pub missing_key: usize,
}

/// Group pairs by an axis and compute per-stratum means exactly the way
/// [`score_pairs`] does. The temporal axis classifies ground-truth
/// `(reference, prior_reference)` pairs through the judge, never
/// predictions. Strata with no members are reported with a count of zero
/// and no summary.
pub fn stratify(
    pairs: &[EvalPair],
    axis: StratifyAxis,
    scoring: &ScoringConfig,
    embedder: &dyn TokenEmbedder,
    judge: Option<&dyn ReportJudge>,
) -> Result<StratifiedTable, EvalError> {
    let mut keyed: BTreeMap<String, Vec<EvalPair>> = BTreeMap::new();
    let mut missing = 0usize;
    for pair in pairs {
        let key = match axis {
            StratifyAxis::Encounter => Some(pair.encounter_bucket.label().to_string()),
            StratifyAxis::Temporal => {
                let category = match pair.temporal_category {
                    Some(c) => c,
                    None => {
                        let judge = judge
                            .ok_or_else(|| EvalError::JudgeRequired(axis.name().to_string()))?;
                        judge.label_temporal(&pair.reference, pair.prior_reference.as_deref())?
                    }
                };
                Some(category.label().to_string())
            }
            StratifyAxis::Gender => pair.demographics.gender.clone(),
            StratifyAxis::AgeBand => pair.demographics.age_band.clone(),
            StratifyAxis::Race => pair.demographics.race.clone(),
        };
        match key {
            Some(key) => keyed.entry(key).or_default().push(pair.clone()),
            None => missing += 1,
        }
    }

    let mut strata = Vec::new();
    let mut emit = |key: String, members: Option<&Vec<EvalPair>>| -> Result<(), EvalError> {
        match members {
            Some(members) if !members.is_empty() => {
                let report = score_pairs(members, scoring, embedder, judge)?;
                strata.push(Stratum {
                    key,
                    count: members.len(),
                    summary: Some(report.summary),
                });
            }
            _ => strata.push(Stratum {
                key,
                count: 0,
                summary: None,
            }),
        }
        Ok(())
    };
    if axis == StratifyAxis::Encounter {
        // Fixed bucket set, reported even when empty.
        for bucket in EncounterBucket::all() {
            let key = bucket.label().to_string();
            let members = keyed.get(&key);
            emit(key, members)?;
        }
    } else {
        for (key, members) in &keyed {
            emit(key.clone(), Some(members))?;
        }
    }
    Ok(StratifiedTable {
        axis: axis.name().to_string(),
        strata,
        missing_key: missing,
    })
}

/// Per-label detection scores against reference labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelF1 {
    pub label: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Absent when the label is affirmed in no reference (undefined, not
    /// zero).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionF1Report {
    pub per_label: Vec<LabelF1>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub macro_f1: Option<f64>,
}

/// Treat reference labels as ground truth and prediction labels as
/// detections; report per-label precision/recall/F1 plus the macro average
/// over defined labels.
pub fn condition_f1(
    pairs: &[EvalPair],
    lexicon: &LabelLexicon,
) -> Result<ConditionF1Report, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::NoPairs);
    }
    let names: Vec<String> = lexicon
        .label_names()
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut tp = vec![0usize; names.len()];
    let mut fp = vec![0usize; names.len()];
    let mut fn_ = vec![0usize; names.len()];
    let mut seen_in_reference = vec![false; names.len()];
    for pair in pairs {
        let pred = label_pathologies(&pair.prediction, lexicon)?;
        let refs = label_pathologies(&pair.reference, lexicon)?;
        for i in 0..names.len() {
            let p = pred.indicators[i] == 1;
            let r = refs.indicators[i] == 1;
            if r {
                seen_in_reference[i] = true;
            }
            match (p, r) {
                (true, true) => tp[i] += 1,
                (true, false) => fp[i] += 1,
                (false, true) => fn_[i] += 1,
                (false, false) => {}
            }
        }
    }
    let mut per_label = Vec::with_capacity(names.len());
    let mut defined_f1 = Vec::new();
    for i in 0..names.len() {
        let (precision, recall, f1) = if seen_in_reference[i] {
            let p = if tp[i] + fp[i] > 0 {
                tp[i] as f64 / (tp[i] + fp[i]) as f64
            } else {
                0.0
            };
            let r = tp[i] as f64 / (tp[i] + fn_[i]) as f64;
            let f1 = if p + r > 0.0 {
                2.0 * p * r / (p + r)
            } else {
                0.0
            };
            defined_f1.push(f1);
            (Some(p), Some(r), Some(f1))
        } else {
            (None, None, None)
        };
        per_label.push(LabelF1 {
            label: names[i].clone(),
            tp: tp[i],
            fp: fp[i],
            fn_: fn_[i],
            precision,
            recall,
            f1,
        });
    }
    let macro_f1 = if defined_f1.is_empty() {
        None
    } else {
        Some(defined_f1.iter().sum::<f64>() / defined_f1.len() as f64)
    };
    Ok(ConditionF1Report {
        per_label,
        macro_f1,
    })
}

// ---------------------------------------------------------------------------
// Human-readable rendering
// ---------------------------------------------------------------------------

fn fmt_agg(a: &Aggregate) -> String {
    format!("{:.4} [{:.4}, {:.4}]", a.mean, a.ci_low, a.ci_high)
}

/// Aligned-column text table of a report.
pub fn render_report_text(report: &EvalReport) -> String {
    let s = &report.summary;
    let mut out = String::new();
    let _ = writeln!(out, "pairs scored          {}", s.n);
    let _ = writeln!(out, "bleu2                 {}", fmt_agg(&s.bleu2));
    let _ = writeln!(out, "soft_f1               {}", fmt_agg(&s.soft_f1));
    let _ = writeln!(out, "semb                  {}", fmt_agg(&s.semb));
    let _ = writeln!(out, "radgraph_f1           {}", fmt_agg(&s.radgraph_f1));
    let _ = writeln!(out, "composite_raw         {}", fmt_agg(&s.composite_raw));
    if let Some(rep) = &s.composite_reported {
        let _ = writeln!(out, "composite_reported    {}", fmt_agg(rep));
    }
    if s.nonpositive_composites > 0 {
        let _ = writeln!(
            out,
            "nonpositive_composites {} (excluded from reported mean)",
            s.nonpositive_composites
        );
    }
    if let Some(err) = &s.judge_errors {
        let _ = writeln!(out, "judge_errors          {}", fmt_agg(err));
    }
    if let Some(h) = &report.error_histogram {
        let _ = writeln!(
            out,
            "error histogram       <=1: {}  2: {}  3: {}  >=4: {}",
            h.le1, h.two, h.three, h.ge4
        );
    }
    if let Some(failure) = &report.judge_failure {
        let _ = writeln!(out, "judge failure         {failure}");
    }
    out
}

/// CSV of the error histogram.
pub fn histogram_csv(histogram: &ErrorHistogram) -> String {
    format!(
        "bucket,count\n<=1,{}\n2,{}\n3,{}\n>=4,{}\n",
        histogram.le1, histogram.two, histogram.three, histogram.ge4
    )
}

/// CSV of a stratified table (one row per stratum).
pub fn strata_csv(table: &StratifiedTable) -> String {
    let mut out = String::from(
        "axis,key,count,bleu2,soft_f1,semb,radgraph_f1,composite_raw,composite_reported\n",
    );
    for stratum in &table.strata {
        match &stratum.summary {
            Some(s) => {
                let _ = writeln!(
                    out,
                    "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
                    table.axis,
                    stratum.key,
                    stratum.count,
                    s.bleu2.mean,
                    s.soft_f1.mean,
                    s.semb.mean,
                    s.radgraph_f1.mean,
                    s.composite_raw.mean,
                    s.composite_reported
                        .as_ref()
                        .map(|a| format!("{:.6}", a.mean))
                        .unwrap_or_else(|| "absent".to_string()),
                );
            }
            None => {
                let _ = writeln!(
                    out,
                    "{},{},0,absent,absent,absent,absent,absent,absent",
                    table.axis, stratum.key
                );
            }
        }
    }
    let _ = writeln!(
        out,
        "{},__missing_key__,{},,,,,,",
        table.axis, table.missing_key
    );
    out
}

/// CSV of condition-level F1.
pub fn condition_csv(report: &ConditionF1Report) -> String {
    let mut out = String::from("label,tp,fp,fn,precision,recall,f1\n");
    let fmt = |v: &Option<f64>| {
        v.map(|x| format!("{x:.6}"))
            .unwrap_or_else(|| "undefined".to_string())
    };
    for label in &report.per_label {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            label.label,
            label.tp,
            label.fp,
            label.fn_,
            fmt(&label.precision),
            fmt(&label.recall),
            fmt(&label.f1),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ImageRef, ReportSections, Timestamp, ViewPosition};
    use crate::judge::{MockBackend, MockEmbedder, MockJudge};

    fn record(study_id: &str, patient: &str, ts: &str, findings: &str) -> StudyRecord {
        StudyRecord {
            study_id: study_id.to_string(),
            patient_id: patient.to_string(),
            timestamp: Timestamp::parse(ts).unwrap(),
            images: vec![ImageRef::new(
                format!("img/{study_id}.png"),
                ViewPosition::FrontalPa,
            )],
            sections: ReportSections {
                indication: Some("cough".to_string()),
                comparison: None,
                findings: Some(findings.to_string()),
                impression: Some("as above".to_string()),
            },
            demographics: Demographics::default(),
        }
    }

    fn pair(study_id: &str, prediction: &str, reference: &str) -> EvalPair {
        EvalPair {
            study_id: study_id.to_string(),
            prediction: prediction.to_string(),
            reference: reference.to_string(),
            prior_reference: None,
            encounter_bucket: EncounterBucket::First,
            temporal_category: None,
            demographics: Demographics::default(),
            truncated: false,
        }
    }

    #[test]
    fn echo_backend_yields_perfect_metrics() {
        let records = vec![
            record("s1", "p1", "2024-01-01", "Clear lungs."),
            record("s2", "p1", "2024-02-01", "Small left pleural effusion."),
        ];
        let pairs = run_inference(&records, &MockBackend, false, 128).unwrap();
        assert_eq!(pairs.len(), 2);
        for p in &pairs {
            assert_eq!(p.prediction, p.reference);
        }
        let report = score_pairs(
            &pairs,
            &ScoringConfig::default(),
            &MockEmbedder::default(),
            None,
        )
        .unwrap();
        assert_eq!(report.summary.bleu2.mean, 1.0);
        assert_eq!(report.summary.soft_f1.mean, 1.0);
        assert_eq!(report.summary.semb.mean, 1.0);
        assert_eq!(report.summary.radgraph_f1.mean, 1.0);
    }

    #[test]
    fn use_prior_controls_prompt_context() {
        use std::sync::Mutex;
        struct Capture(Mutex<Vec<String>>);
        impl TextBackend for Capture {
            fn generate(
                &self,
                prompt: &crate::corpus::PromptInstance,
                _t: f64,
                _s: Option<u64>,
                _m: usize,
            ) -> Result<crate::judge::Generation, JudgeError> {
                self.0.lock().unwrap().push(prompt.text.clone());
                Ok(crate::judge::Generation {
                    text: prompt.target.clone(),
                    truncated: false,
                })
            }
        }
        let records = vec![
            record("s1", "p1", "2024-01-01", "Baseline effusion."),
            record("s2", "p1", "2024-02-01", "Effusion resolved."),
        ];
        let capture = Capture(Mutex::new(Vec::new()));
        run_inference(&records, &capture, false, 128).unwrap();
        for text in capture.0.lock().unwrap().iter() {
            assert!(!text.contains("Prior study report:"));
        }
        let capture = Capture(Mutex::new(Vec::new()));
        let pairs = run_inference(&records, &capture, true, 128).unwrap();
        let texts = capture.0.lock().unwrap();
        assert!(!texts[0].contains("Prior study report:"));
        assert!(texts[1].contains("Prior study report:"));
        assert!(texts[1].contains("Baseline effusion."));
        // prior_reference is populated from linkage either way.
        assert_eq!(
            pairs[1].prior_reference.as_deref(),
            Some("Findings: Baseline effusion.\nImpression: as above")
        );
    }

    #[test]
    fn inference_is_deterministic() {
        let records = vec![
            record("s1", "p1", "2024-01-01", "Clear."),
            record("s2", "p2", "2024-01-02", "Edema."),
        ];
        let a = run_inference(&records, &MockBackend, true, 64).unwrap();
        let b = run_inference(&records, &MockBackend, true, 64).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn backend_failure_carries_partial_results() {
        struct FailAfter(std::sync::atomic::AtomicUsize);
        impl TextBackend for FailAfter {
            fn generate(
                &self,
                prompt: &crate::corpus::PromptInstance,
                _t: f64,
                _s: Option<u64>,
                _m: usize,
            ) -> Result<crate::judge::Generation, JudgeError> {
                if self.0.fetch_add(1, std::sync::atomic::Ordering::SeqCst) >= 1 {
                    return Err(JudgeError::Permanent {
                        status: 500,
                        message: "boom".to_string(),
                    });
                }
                Ok(crate::judge::Generation {
                    text: prompt.target.clone(),
                    truncated: false,
                })
            }
        }
        let records = vec![
            record("s1", "p1", "2024-01-01", "Clear."),
            record("s2", "p2", "2024-01-02", "Edema."),
        ];
        match run_inference(&records, &FailAfter(Default::default()), false, 64) {
            Err(EvalError::Backend { completed, .. }) => assert_eq!(completed.len(), 1),
            other => panic!("expected backend error, got {other:?}"),
        }
    }

    #[test]
    fn reported_composite_mean_inverts_raw() {
        // Coefficients that make every perfect pair score raw 1.6, so the
        // reported mean is 0.625.
        let scoring = ScoringConfig {
            coefficients: CompositeCoefficients {
                w_bleu: 0.0,
                w_soft: 1.6,
                w_semb: 0.0,
                w_radgraph: 0.0,
                intercept: 0.0,
                reciprocal: true,
            },
            ..ScoringConfig::default()
        };
        let pairs = vec![
            pair("a", "clear lungs", "clear lungs"),
            pair("b", "stable heart", "stable heart"),
        ];
        let report = score_pairs(&pairs, &scoring, &MockEmbedder::default(), None).unwrap();
        let reported = report.summary.composite_reported.unwrap();
        assert!((reported.mean - 0.625).abs() < 1e-12);
    }

    #[test]
    fn histogram_buckets_match_hand_counts() {
        let h = ErrorHistogram::from_counts([0, 1, 2, 3, 4, 7]);
        assert_eq!(
            h,
            ErrorHistogram {
                le1: 2,
                two: 1,
                three: 1,
                ge4: 2
            }
        );
        assert_eq!(h.total(), 6);
    }

    #[test]
    fn judge_errors_populate_histogram() {
        let judge = MockJudge::default();
        let pairs = vec![
            pair("a", "Pleural effusion.", "Pleural effusion."),
            pair("b", "Pneumonia.", "Pleural effusion."),
        ];
        let report = score_pairs(
            &pairs,
            &ScoringConfig::default(),
            &MockEmbedder::default(),
            Some(&judge),
        )
        .unwrap();
        let histogram = report.error_histogram.unwrap();
        assert_eq!(histogram.total(), 2);
        assert_eq!(histogram.le1, 1);
        assert_eq!(histogram.two, 1);
        let errors = report.summary.judge_errors.unwrap();
        assert!((errors.mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn judge_failure_drops_judge_fields_only() {
        struct FailingJudge;
        impl ReportJudge for FailingJudge {
            fn count_errors(
                &self,
                _c: &str,
                _r: &str,
            ) -> Result<crate::judge::JudgeVerdict, JudgeError> {
                Err(JudgeError::Permanent {
                    status: 503,
                    message: "down".to_string(),
                })
            }
            fn label_temporal(
                &self,
                _c: &str,
                _p: Option<&str>,
            ) -> Result<TemporalCategory, JudgeError> {
                Err(JudgeError::Permanent {
                    status: 503,
                    message: "down".to_string(),
                })
            }
        }
        let pairs = vec![pair("a", "clear", "clear")];
        let report = score_pairs(
            &pairs,
            &ScoringConfig::default(),
            &MockEmbedder::default(),
            Some(&FailingJudge),
        )
        .unwrap();
        assert!(report.judge_failure.is_some());
        assert!(report.error_histogram.is_none());
        assert!(report.summary.judge_errors.is_none());
        assert_eq!(report.summary.bleu2.mean, 1.0);
    }

    fn timeline_records() -> Vec<StudyRecord> {
        (1..=6)
            .map(|i| {
                record(
                    &format!("s{i}"),
                    "p1",
                    &format!("2024-0{i}-01"),
                    &format!("state {i}"),
                )
            })
            .collect()
    }

    #[test]
    fn copy_prior_copies_verbatim_and_counts_exclusions() {
        let records = timeline_records();
        let (pairs, excluded) = copy_prior_baseline(&records).unwrap();
        assert_eq!(excluded, 1);
        assert_eq!(pairs.len(), 5);
        assert_eq!(pairs[0].study_id, "s2");
        assert_eq!(
            pairs[0].prediction,
            "Findings: state 1\nImpression: as above"
        );
        // Identical current and prior references score 1 everywhere.
        let twin = EvalPair {
            prediction: pairs[0].reference.clone(),
            ..pairs[0].clone()
        };
        let report = score_pairs(
            &[twin],
            &ScoringConfig::default(),
            &MockEmbedder::default(),
            None,
        )
        .unwrap();
        assert_eq!(report.summary.soft_f1.mean, 1.0);
        assert_eq!(report.summary.radgraph_f1.mean, 1.0);
    }

    #[test]
    fn encounter_strata_cover_all_buckets() {
        let records = timeline_records();
        let pairs = run_inference(&records, &MockBackend, false, 64).unwrap();
        let table = stratify(
            &pairs,
            StratifyAxis::Encounter,
            &ScoringConfig::default(),
            &MockEmbedder::default(),
            None,
        )
        .unwrap();
        let counts: Vec<(String, usize)> = table
            .strata
            .iter()
            .map(|s| (s.key.clone(), s.count))
            .collect();
        assert_eq!(
            counts,
            vec![
                ("1".to_string(), 1),
                ("2".to_string(), 1),
                ("3".to_string(), 1),
                ("4".to_string(), 1),
                ("5+".to_string(), 2),
            ]
        );
        // Partition: stratum counts plus missing cover every pair.
        let total: usize = table.strata.iter().map(|s| s.count).sum();
        assert_eq!(total + table.missing_key, pairs.len());
    }

    #[test]
    fn missing_demographics_leave_table_absent() {
        let pairs = vec![pair("a", "x", "x"), pair("b", "y", "y")];
        let table = stratify(
            &pairs,
            StratifyAxis::Race,
            &ScoringConfig::default(),
            &MockEmbedder::default(),
            None,
        )
        .unwrap();
        assert!(table.strata.is_empty());
        assert_eq!(table.missing_key, 2);
    }

    #[test]
    fn temporal_axis_uses_judge_on_reference_pairs() {
        let judge = MockJudge::default();
        let mut first = pair("a", "anything", "Pleural effusion.");
        first.prior_reference = None;
        let mut unchanged = pair("b", "anything", "Stable pleural effusion.");
        unchanged.prior_reference = Some("Pleural effusion.".to_string());
        let mut new_dev = pair("c", "anything", "New pneumonia.");
        new_dev.prior_reference = Some("Clear lungs.".to_string());
        let table = stratify(
            &[first, unchanged, new_dev],
            StratifyAxis::Temporal,
            &ScoringConfig::default(),
            &MockEmbedder::default(),
            Some(&judge),
        )
        .unwrap();
        let keys: Vec<(String, usize)> = table
            .strata
            .iter()
            .map(|s| (s.key.clone(), s.count))
            .collect();
        assert_eq!(
            keys,
            vec![
                ("first_study".to_string(), 1),
                ("new_development".to_string(), 1),
                ("no_change".to_string(), 1),
            ]
        );
    }

    #[test]
    fn temporal_axis_without_judge_is_an_error() {
        let pairs = vec![pair("a", "x", "x")];
        assert!(matches!(
            stratify(
                &pairs,
                StratifyAxis::Temporal,
                &ScoringConfig::default(),
                &MockEmbedder::default(),
                None,
            ),
            Err(EvalError::JudgeRequired(_))
        ));
    }

    #[test]
    fn condition_f1_matches_hand_confusion_counts() {
        // pneumonia: TP=1 (a), FP=1 (b), FN=1 (c) -> precision 0.5,
        // recall 0.5, F1 0.5.
        let pairs = vec![
            pair("a", "Pneumonia present.", "Pneumonia present."),
            pair("b", "Pneumonia present.", "Clear lungs."),
            pair("c", "Clear lungs.", "Pneumonia present."),
            pair("d", "Clear lungs.", "Clear lungs."),
        ];
        let report = condition_f1(&pairs, &LabelLexicon::default_14()).unwrap();
        let pneumonia = report
            .per_label
            .iter()
            .find(|l| l.label == "pneumonia")
            .unwrap();
        assert_eq!((pneumonia.tp, pneumonia.fp, pneumonia.fn_), (1, 1, 1));
        assert_eq!(pneumonia.f1, Some(0.5));
        // A label affirmed nowhere is undefined, not zero.
        let fracture = report
            .per_label
            .iter()
            .find(|l| l.label == "fracture")
            .unwrap();
        assert_eq!(fracture.f1, None);
    }

    #[test]
    fn perfect_predictions_make_every_defined_label_one() {
        let pairs = vec![
            pair("a", "Pleural effusion.", "Pleural effusion."),
            pair("b", "Pneumonia and edema.", "Pneumonia and edema."),
        ];
        let report = condition_f1(&pairs, &LabelLexicon::default_14()).unwrap();
        for label in &report.per_label {
            if let Some(f1) = label.f1 {
                assert_eq!(f1, 1.0, "label {}", label.label);
            }
        }
        assert_eq!(report.macro_f1, Some(1.0));
    }

    #[test]
    fn score_pairs_mean_matches_naive_recomputation() {
        let pairs = vec![
            pair("a", "clear lungs", "clear lungs stable"),
            pair("b", "pneumonia right", "pneumonia left"),
            pair("c", "no effusion", "effusion"),
        ];
        let scoring = ScoringConfig::default();
        let embedder = MockEmbedder::default();
        let report = score_pairs(&pairs, &scoring, &embedder, None).unwrap();
        let naive: f64 = pairs
            .iter()
            .map(|p| {
                score_pair_texts(&p.prediction, &p.reference, &scoring, &embedder)
                    .unwrap()
                    .soft_f1
            })
            .sum::<f64>()
            / pairs.len() as f64;
        assert!((report.summary.soft_f1.mean - naive).abs() < 1e-12);
    }

    #[test]
    fn findings_scope_scores_sections_only() {
        let scoring = ScoringConfig {
            scope: SectionScope::Findings,
            ..ScoringConfig::default()
        };
        let p = pair(
            "a",
            "Findings: clear lungs\nImpression: wildly different text",
            "Findings: clear lungs\nImpression: no acute disease",
        );
        let report = score_pairs(&[p], &scoring, &MockEmbedder::default(), None).unwrap();
        assert_eq!(report.summary.soft_f1.mean, 1.0);
    }
}
