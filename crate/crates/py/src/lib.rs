//! Python bindings: the metric suite, reward arithmetic, the GRPO math
//! ops, and a small end-to-end training demo on the synthetic grammar
//! task.

use std::collections::HashMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use reportgen_core::corpus;
use reportgen_core::grpo;
use reportgen_core::judge::{MockEmbedder, MockJudge, ReportJudge};
use reportgen_core::metrics;
use reportgen_core::reward;

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_stage(stage: &str) -> PyResult<reward::RewardStage> {
    match stage {
        "stage1" => Ok(reward::RewardStage::Stage1),
        "stage2" => Ok(reward::RewardStage::Stage2),
        other => Err(PyValueError::new_err(format!(
            "stage must be stage1 or stage2, got {other:?}"
        ))),
    }
}

/// Split raw report text into its recognized sections.
#[pyfunction]
fn parse_sections(text: &str) -> HashMap<String, String> {
    let sections = corpus::parse_sections(text);
    let mut out = HashMap::new();
    if let Some(v) = sections.indication {
        out.insert("indication".to_string(), v);
    }
    if let Some(v) = sections.comparison {
        out.insert("comparison".to_string(), v);
    }
    if let Some(v) = sections.findings {
        out.insert("findings".to_string(), v);
    }
    if let Some(v) = sections.impression {
        out.insert("impression".to_string(), v);
    }
    out
}

/// BLEU-2 with clipped n-gram counts and brevity penalty.
#[pyfunction]
fn bleu2(candidate: &str, reference: &str) -> f64 {
    metrics::bleu2(candidate, reference)
}

/// Greedy soft token matching F1 under the deterministic mock embedder.
/// Returns (precision, recall, f1).
#[pyfunction]
fn soft_token_f1(candidate: &str, reference: &str) -> PyResult<(f64, f64, f64)> {
    let score = metrics::soft_token_f1(candidate, reference, &MockEmbedder::default())
        .map_err(value_err)?;
    Ok((score.precision, score.recall, score.f1))
}

/// All four base metrics of a candidate against a reference, using the
/// default 14-label lexicon, chest pattern set, and mock embedder.
#[pyfunction]
fn score_report(candidate: &str, reference: &str) -> PyResult<HashMap<String, f64>> {
    let lexicon = metrics::LabelLexicon::default_14();
    let patterns = metrics::PatternSet::default_chest();
    let soft = metrics::soft_token_f1(candidate, reference, &MockEmbedder::default())
        .map_err(value_err)?;
    let cand_labels = metrics::label_pathologies(candidate, &lexicon).map_err(value_err)?;
    let ref_labels = metrics::label_pathologies(reference, &lexicon).map_err(value_err)?;
    let semb = metrics::semb_score(&cand_labels, &ref_labels).map_err(value_err)?;
    let cand_graph = metrics::extract_entities(candidate, &patterns);
    let ref_graph = metrics::extract_entities(reference, &patterns);
    let mut out = HashMap::new();
    out.insert("bleu2".to_string(), metrics::bleu2(candidate, reference));
    out.insert("soft_f1".to_string(), soft.f1);
    out.insert("semb".to_string(), semb);
    out.insert(
        "radgraph_f1".to_string(),
        metrics::radgraph_f1(&cand_graph, &ref_graph),
    );
    Ok(out)
}

/// Mock-judge clinical error count: the symmetric difference between the
/// affirmed pathology-label sets of candidate and reference.
#[pyfunction]
fn count_errors(candidate: &str, reference: &str) -> PyResult<u32> {
    MockJudge::default()
        .count_errors(candidate, reference)
        .map(|v| v.error_count)
        .map_err(value_err)
}

/// Mock temporal label of (current, prior) ground-truth reports.
#[pyfunction]
#[pyo3(signature = (current, prior=None))]
fn label_temporal(current: &str, prior: Option<&str>) -> PyResult<String> {
    MockJudge::default()
        .label_temporal(current, prior)
        .map(|c| c.label().to_string())
        .map_err(value_err)
}

/// The error-count transform 1 / (errors + 1).
#[pyfunction]
fn judge_reward(error_count: u32) -> f64 {
    reward::judge_reward(error_count)
}

/// Stage defaults as a dict of weights and coefficients.
#[pyfunction]
fn reward_schedule(stage: &str) -> PyResult<HashMap<String, f64>> {
    let config = reward::RewardConfig::schedule(parse_stage(stage)?);
    let mut out = HashMap::new();
    out.insert("w_bleu".to_string(), config.metric_weights.bleu2);
    out.insert("w_soft".to_string(), config.metric_weights.soft_f1);
    out.insert("w_semb".to_string(), config.metric_weights.semb);
    out.insert("w_radgraph".to_string(), config.metric_weights.radgraph_f1);
    out.insert("judge_weight".to_string(), config.judge_weight);
    out.insert("kl_coefficient".to_string(), config.kl_coefficient);
    Ok(out)
}

/// Scalar reward of one response under a stage schedule.
#[pyfunction]
#[pyo3(signature = (stage, bleu2, soft_f1, semb, radgraph_f1, judge_errors=None))]
fn total_reward(
    stage: &str,
    bleu2: f64,
    soft_f1: f64,
    semb: f64,
    radgraph_f1: f64,
    judge_errors: Option<u32>,
) -> PyResult<f64> {
    let mut mv = metrics::MetricVector::new(bleu2, soft_f1, semb, radgraph_f1);
    if let Some(errors) = judge_errors {
        mv = mv.with_judge_errors(errors);
    }
    reward::total_reward(&mv, &reward::RewardConfig::schedule(parse_stage(stage)?))
        .map_err(value_err)
}

/// Composite score under the default coefficients; returns (raw, reported).
#[pyfunction]
#[pyo3(signature = (bleu2, soft_f1, semb, radgraph_f1, reciprocal=false))]
fn composite_score(
    bleu2: f64,
    soft_f1: f64,
    semb: f64,
    radgraph_f1: f64,
    reciprocal: bool,
) -> PyResult<(f64, f64)> {
    let mv = metrics::MetricVector::new(bleu2, soft_f1, semb, radgraph_f1);
    let coeffs = metrics::CompositeCoefficients::default().with_reciprocal(reciprocal);
    let score = metrics::composite(&mv, &coeffs).map_err(value_err)?;
    Ok((score.raw, score.reported))
}

/// Group-normalized advantages with the population standard deviation.
#[pyfunction]
fn normalize_advantages(rewards: Vec<f64>) -> PyResult<Vec<f64>> {
    grpo::normalize_advantages(&rewards).map_err(value_err)
}

/// Clip-higher surrogate min(r*A, clip(r, 1-lo, 1+hi)*A).
#[pyfunction]
fn clipped_surrogate(ratio: f64, advantage: f64, eps_low: f64, eps_high: f64) -> f64 {
    grpo::clipped_surrogate(ratio, advantage, eps_low, eps_high)
}

/// Per-token KL estimator exp(d) - d - 1 with d = logp_ref - logp_new.
#[pyfunction]
fn kl_term(logp_new: f64, logp_ref: f64) -> f64 {
    grpo::kl_term(logp_new, logp_ref)
}

/// Run SFT then stage-1 GRPO on the seeded grammar task; returns a dict
/// with the final mean reward and the enumeration-oracle mean.
#[pyfunction]
#[pyo3(signature = (seed=1, sft_steps=200, rl_updates=900))]
fn train_grammar_demo(
    seed: u64,
    sft_steps: usize,
    rl_updates: usize,
) -> PyResult<HashMap<String, f64>> {
    let task =
        grpo::make_grammar_task(seed, grpo::GrammarTaskConfig::default()).map_err(value_err)?;
    let mut policy = task.build_policy().map_err(value_err)?;
    let pairs = task.sft_pairs(&policy).map_err(value_err)?;
    grpo::run_sft(&mut policy, &pairs, sft_steps, 0.5).map_err(value_err)?;
    let config = grpo::TrainerConfig {
        learning_rate: 0.5,
        prompts_per_batch: task.prompts.len(),
        group_size: 8,
        clip_low: 0.2,
        clip_high: 0.28,
        kl_coefficient: 0.0,
        epochs: 1,
        seed,
        rollout_temperature: 1.0,
        loss_aggregation: Default::default(),
    };
    let log = grpo::run_grpo(
        &mut policy,
        &task,
        &task.contexts(),
        &config,
        None,
        rl_updates,
    )
    .map_err(value_err)?;
    let window = 20.min(log.len()).max(1);
    let mean_reward = log
        .iter()
        .rev()
        .take(window)
        .map(|r| r.mean_reward)
        .sum::<f64>()
        / window as f64;
    let oracle_mean = task.oracle_max.iter().sum::<f64>() / task.oracle_max.len() as f64;
    let mut out = HashMap::new();
    out.insert("mean_reward".to_string(), mean_reward);
    out.insert("oracle_mean".to_string(), oracle_mean);
    out.insert("updates".to_string(), log.len() as f64);
    Ok(out)
}

#[pymodule]
fn reportgen(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add(
        "FINDINGS_IMPRESSION_TEMPLATE",
        corpus::FINDINGS_IMPRESSION_TEMPLATE,
    )?;
    m.add("FINDINGS_ONLY_TEMPLATE", corpus::FINDINGS_ONLY_TEMPLATE)?;
    m.add_function(wrap_pyfunction!(parse_sections, m)?)?;
    m.add_function(wrap_pyfunction!(bleu2, m)?)?;
    m.add_function(wrap_pyfunction!(soft_token_f1, m)?)?;
    m.add_function(wrap_pyfunction!(score_report, m)?)?;
    m.add_function(wrap_pyfunction!(count_errors, m)?)?;
    m.add_function(wrap_pyfunction!(label_temporal, m)?)?;
    m.add_function(wrap_pyfunction!(judge_reward, m)?)?;
    m.add_function(wrap_pyfunction!(reward_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(total_reward, m)?)?;
    m.add_function(wrap_pyfunction!(composite_score, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_advantages, m)?)?;
    m.add_function(wrap_pyfunction!(clipped_surrogate, m)?)?;
    m.add_function(wrap_pyfunction!(kl_term, m)?)?;
    m.add_function(wrap_pyfunction!(train_grammar_demo, m)?)?;
    Ok(())
}
