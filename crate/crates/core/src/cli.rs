//! Command-line front end: ingestion, splitting, the three training
//! stages, evaluation, stratification, the copy-prior baseline, and the
//! mock protocol server.
//!
//! One experiment writes into one output directory: a config snapshot,
//! checkpoints, JSONL logs, and evaluation reports, so a saved config
//! re-runs the identical experiment.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::corpus::{self, CorpusError, IngestSummary, StudyRecord};
use crate::eval::{
    self, condition_csv, histogram_csv, render_report_text, strata_csv, EvalError, EvalPair,
    ScoringConfig, SectionScope, StratifyAxis,
};
use crate::grpo::policy::{config_hash, Checkpoint};
use crate::grpo::{
    make_grammar_task, run_grpo, run_sft, CountingPolicy, GrammarTaskConfig, GrpoError, ToyPolicy,
    TrainerConfig,
};
use crate::judge::{
    HttpBackend, HttpEmbedder, HttpJudge, MockBackend, MockEmbedder, MockJudge, MockServer,
    ReportJudge, ServiceEndpoint, TextBackend,
};
use crate::metrics::{CompositeCoefficients, TokenEmbedder};
use crate::reward::{CachedJudge, RewardConfig, RewardStage};

/// Exit codes: 0 success, 2 i/o or usage, 3 data validation, 4 permanent
/// remote-service failure.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Remote(String),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) | CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Remote(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<GrpoError> for CliError {
    fn from(e: GrpoError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<crate::judge::JudgeError> for CliError {
    fn from(e: crate::judge::JudgeError) -> Self {
        CliError::Remote(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "reportgen",
    about = "Report-generation RL pipeline: corpus curation, metrics, GRPO training, evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and filter a JSONL corpus; writes the kept records and prints
    /// a summary.
    Ingest(IngestArgs),
    /// Deterministic seeded validation split.
    Split(SplitArgs),
    /// Train a stage (sft, rl1, rl2) of the pipeline on the synthetic
    /// grammar task.
    Train(TrainArgs),
    /// Generate with a backend and score against references.
    Evaluate(EvaluateArgs),
    /// Recompute per-stratum tables from a saved pairs file.
    Stratify(StratifyArgs),
    /// Score the copy-prior baseline over a corpus.
    Baseline(BaselineArgs),
    /// Serve the mock judge/embed/generate protocol over HTTP.
    ServeMock(ServeMockArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Input corpus (JSONL).
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Filtered output corpus (JSONL).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Validation sample count.
    #[arg(long, default_value_t = 1024)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_train: PathBuf,
    #[arg(long)]
    pub out_val: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainStage {
    Sft,
    Rl1,
    Rl2,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub stage: TrainStage,
    /// Experiment config JSON; defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint to initialize from (required for rl2, optional for rl1).
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config update count for RL stages.
    #[arg(long)]
    pub updates: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// `echo`, `toy:<checkpoint>`, or an http:// endpoint.
    #[arg(long)]
    pub backend: String,
    /// Include the most recent prior study in the prompt.
    #[arg(long, default_value_t = false)]
    pub use_prior: bool,
    /// `mock`, `none`, or an http:// endpoint.
    #[arg(long, default_value = "none")]
    pub judge: String,
    /// `mock` or an http:// endpoint serving /embed.
    #[arg(long, default_value = "mock")]
    pub embed: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Score full targets or findings sections only.
    #[arg(long, default_value = "full")]
    pub sections: String,
    /// Composite coefficients JSON file (defaults to the stage-1 weights
    /// with reciprocal reporting).
    #[arg(long)]
    pub coefficients: Option<PathBuf>,
    /// Label lexicon JSON file (defaults to the standard 14-label set).
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Entity pattern-set JSON file (defaults to the chest patterns).
    #[arg(long)]
    pub patterns: Option<PathBuf>,
    /// Generation token budget.
    #[arg(long, default_value_t = 128)]
    pub max_tokens: usize,
    /// Bootstrap resampling seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct StratifyArgs {
    /// Pairs JSONL produced by `evaluate` or `baseline`.
    #[arg(long)]
    pub pairs: PathBuf,
    /// encounter | temporal | gender | age_band | race
    #[arg(long)]
    pub axis: String,
    #[arg(long, default_value = "none")]
    pub judge: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Bootstrap resampling seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "none")]
    pub judge: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Bootstrap resampling seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ServeMockArgs {
    #[arg(long, default_value_t = 8383)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

/// The single structured experiment configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub task: GrammarTaskConfig,
    #[serde(default = "desk_trainer")]
    pub trainer: TrainerConfig,
    #[serde(default = "default_sft_steps")]
    pub sft_steps: usize,
    #[serde(default = "default_sft_lr")]
    pub sft_learning_rate: f64,
    #[serde(default = "default_rl_updates")]
    pub rl_updates: usize,
}

fn desk_trainer() -> TrainerConfig {
    TrainerConfig {
        learning_rate: 0.5,
        prompts_per_batch: 8,
        group_size: 8,
        clip_low: 0.2,
        clip_high: 0.28,
        kl_coefficient: 0.0,
        epochs: 1,
        seed: 0,
        rollout_temperature: 1.0,
        loss_aggregation: Default::default(),
    }
}

fn default_sft_steps() -> usize {
    200
}
fn default_sft_lr() -> f64 {
    0.5
}
fn default_rl_updates() -> usize {
    600
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            task: GrammarTaskConfig::default(),
            trainer: desk_trainer(),
            sft_steps: default_sft_steps(),
            sft_learning_rate: default_sft_lr(),
            rl_updates: default_rl_updates(),
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Split(args) => cmd_split(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Stratify(args) => cmd_stratify(args),
        Command::Baseline(args) => cmd_baseline(args),
        Command::ServeMock(args) => cmd_serve_mock(args),
    }
}

fn read_corpus_file(path: &Path) -> Result<Vec<StudyRecord>, CliError> {
    let file = fs::File::open(path)
        .map_err(|e| CliError::Io(format!("cannot open {}: {e}", path.display())))?;
    corpus::load_corpus(BufReader::new(file)).map_err(CliError::from)
}

fn write_corpus_file(path: &Path, records: &[StudyRecord]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let file = fs::File::create(path)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", path.display())))?;
    corpus::write_corpus(BufWriter::new(file), records).map_err(CliError::from)
}

fn write_text(path: &Path, content: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, content)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_text(
        path,
        &serde_json::to_string_pretty(value).expect("serializable"),
    )
}

pub fn cmd_ingest(args: IngestArgs) -> Result<(), CliError> {
    let records = read_corpus_file(&args.input)?;
    let read = records.len();
    let kept = corpus::filter_corpus(records);
    let mut summary = IngestSummary {
        read,
        kept: kept.len(),
        dropped_empty: read - kept.len(),
        ..IngestSummary::default()
    };
    for record in &kept {
        match (&record.sections.findings, &record.sections.impression) {
            (Some(_), Some(_)) => summary.both_sections += 1,
            (Some(_), None) => summary.findings_only += 1,
            (None, Some(_)) => summary.impression_only += 1,
            (None, None) => unreachable!("filtered"),
        }
    }
    write_corpus_file(&args.out, &kept)?;
    println!("{}", serde_json::to_string(&summary).expect("serializable"));
    Ok(())
}

pub fn cmd_split(args: SplitArgs) -> Result<(), CliError> {
    let records = read_corpus_file(&args.input)?;
    let (train, validation) = corpus::split_validation(records, args.n, args.seed)?;
    write_corpus_file(&args.out_train, &train)?;
    write_corpus_file(&args.out_val, &validation)?;
    println!(
        "{}",
        serde_json::json!({"train": train.len(), "validation": validation.len(), "seed": args.seed})
    );
    Ok(())
}

fn load_experiment_config(path: Option<&Path>) -> Result<ExperimentConfig, CliError> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Data(format!("bad config {}: {e}", path.display())))
        }
    }
}

fn load_checkpoint(path: &Path) -> Result<(ToyPolicy, Checkpoint), CliError> {
    let file = fs::File::open(path)
        .map_err(|e| CliError::Io(format!("cannot open {}: {e}", path.display())))?;
    let checkpoint =
        Checkpoint::read_from(BufReader::new(file)).map_err(|e| CliError::Data(e.to_string()))?;
    let policy =
        ToyPolicy::from_checkpoint(&checkpoint).map_err(|e| CliError::Data(e.to_string()))?;
    Ok((policy, checkpoint))
}

/// Stage snapshot written next to every checkpoint.
#[derive(Debug, Serialize)]
struct ResolvedStage<'a> {
    stage: &'a str,
    seed: u64,
    reward: RewardConfig,
    trainer: &'a TrainerConfig,
    experiment: &'a ExperimentConfig,
}

pub fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let mut config = load_experiment_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(updates) = args.updates {
        config.rl_updates = updates;
    }
    let stage_name = match args.stage {
        TrainStage::Sft => "sft",
        TrainStage::Rl1 => "rl1",
        TrainStage::Rl2 => "rl2",
    };
    if args.stage == TrainStage::Rl2 && args.init.is_none() {
        return Err(CliError::Usage(
            "--stage rl2 requires --init <checkpoint> (the stage-1 policy is the KL reference)"
                .into(),
        ));
    }

    // Resolve the stage reward schedule into the task and trainer.
    let mut task_config = config.task.clone();
    let mut trainer = config.trainer.clone();
    trainer.seed = config.seed;
    match args.stage {
        TrainStage::Sft => {}
        TrainStage::Rl1 => {
            task_config.reward = RewardConfig::schedule(RewardStage::Stage1);
            trainer.kl_coefficient = 0.0;
        }
        TrainStage::Rl2 => {
            let schedule = RewardConfig::schedule(RewardStage::Stage2);
            task_config.reward = schedule;
            task_config.track_judge_errors = true;
            trainer.kl_coefficient = schedule.kl_coefficient;
        }
    }
    let task = make_grammar_task(config.seed, task_config.clone())
        .map_err(|e| CliError::Data(e.to_string()))?;

    fs::create_dir_all(&args.out)?;
    let resolved = ResolvedStage {
        stage: stage_name,
        seed: config.seed,
        reward: task_config.reward,
        trainer: &trainer,
        experiment: &config,
    };
    write_json(&args.out.join("config.json"), &resolved)?;
    let resolved_json = serde_json::to_value(&resolved).expect("serializable");

    let (mut policy, start_step) = match &args.init {
        Some(path) => {
            let (policy, checkpoint) = load_checkpoint(path)?;
            if policy.n_contexts() != task.prompts.len() {
                return Err(CliError::Data(format!(
                    "checkpoint has {} contexts but the task has {} prompts",
                    policy.n_contexts(),
                    task.prompts.len()
                )));
            }
            (policy, checkpoint.step)
        }
        None => (
            task.build_policy()
                .map_err(|e| CliError::Data(e.to_string()))?,
            0,
        ),
    };

    match args.stage {
        TrainStage::Sft => {
            let pairs = task
                .sft_pairs(&policy)
                .map_err(|e| CliError::Data(e.to_string()))?;
            let losses = run_sft(
                &mut policy,
                &pairs,
                config.sft_steps,
                config.sft_learning_rate,
            )?;
            let mut log = String::new();
            for (step, loss) in losses.iter().enumerate() {
                log.push_str(&serde_json::json!({"step": step, "loss": loss}).to_string());
                log.push('\n');
            }
            write_text(&args.out.join("sft_log.jsonl"), &log)?;
        }
        TrainStage::Rl1 | TrainStage::Rl2 => {
            let reference = if trainer.kl_coefficient > 0.0 {
                Some(CountingPolicy::new(policy.clone()))
            } else {
                None
            };
            let log = run_grpo(
                &mut policy,
                &task,
                &task.contexts(),
                &trainer,
                reference.as_ref(),
                config.rl_updates,
            )?;
            let mut text = String::new();
            for record in &log {
                text.push_str(&serde_json::to_string(record).expect("serializable"));
                text.push('\n');
            }
            write_text(&args.out.join("train_log.jsonl"), &text)?;
        }
    }

    let steps_run = match args.stage {
        TrainStage::Sft => config.sft_steps as u64,
        _ => config.rl_updates as u64,
    };
    let checkpoint = policy.to_checkpoint(resolved_json.clone(), start_step + steps_run);
    let mut buffer = Vec::new();
    checkpoint
        .write_to(&mut buffer)
        .map_err(|e| CliError::Io(e.to_string()))?;
    write_text(
        &args.out.join("checkpoint.json"),
        std::str::from_utf8(&buffer).expect("utf8 json"),
    )?;
    println!(
        "{}",
        serde_json::json!({
            "stage": stage_name,
            "seed": config.seed,
            "checkpoint": args.out.join("checkpoint.json"),
            "config_hash": config_hash(&resolved_json),
        })
    );
    Ok(())
}

fn make_backend(spec: &str) -> Result<Box<dyn TextBackend>, CliError> {
    if spec == "echo" {
        return Ok(Box::new(MockBackend));
    }
    if let Some(path) = spec.strip_prefix("toy:") {
        let (policy, _) = load_checkpoint(Path::new(path))?;
        return Ok(Box::new(crate::grpo::PolicyBackend::new(policy)));
    }
    if spec.starts_with("http://") {
        let backend = HttpBackend::new(ServiceEndpoint::new(spec))
            .map_err(|e| CliError::Usage(e.to_string()))?;
        return Ok(Box::new(backend));
    }
    Err(CliError::Usage(format!(
        "backend must be echo, toy:<checkpoint>, or an http:// url, got {spec:?}"
    )))
}

fn make_judge(spec: &str) -> Result<Option<Box<dyn ReportJudge>>, CliError> {
    // Verdicts are cached by (candidate, reference) hash: the judge is
    // treated as a pure function per configuration.
    let cached =
        |inner: Box<dyn ReportJudge>| -> Box<dyn ReportJudge> { Box::new(CachedJudge::new(inner)) };
    match spec {
        "none" => Ok(None),
        "mock" => Ok(Some(cached(Box::<MockJudge>::default()))),
        url if url.starts_with("http://") => {
            let judge = HttpJudge::new(ServiceEndpoint::new(url))
                .map_err(|e| CliError::Usage(e.to_string()))?;
            Ok(Some(cached(Box::new(judge))))
        }
        other => Err(CliError::Usage(format!(
            "judge must be none, mock, or an http:// url, got {other:?}"
        ))),
    }
}

fn make_embedder(spec: &str) -> Result<Box<dyn TokenEmbedder>, CliError> {
    match spec {
        "mock" => Ok(Box::new(MockEmbedder::default())),
        url if url.starts_with("http://") => {
            let embedder = HttpEmbedder::new(ServiceEndpoint::new(url))
                .map_err(|e| CliError::Usage(e.to_string()))?;
            Ok(Box::new(embedder))
        }
        other => Err(CliError::Usage(format!(
            "embedder must be mock or an http:// url, got {other:?}"
        ))),
    }
}

fn scoring_config(
    sections: &str,
    coefficients: Option<&Path>,
    lexicon: Option<&Path>,
    patterns: Option<&Path>,
) -> Result<ScoringConfig, CliError> {
    let scope = match sections {
        "full" => SectionScope::Full,
        "findings" => SectionScope::Findings,
        other => {
            return Err(CliError::Usage(format!(
                "--sections must be full or findings, got {other:?}"
            )))
        }
    };
    let mut scoring = ScoringConfig {
        scope,
        ..ScoringConfig::default()
    };
    if let Some(path) = coefficients {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
        scoring.coefficients = serde_json::from_str::<CompositeCoefficients>(&text)
            .map_err(|e| CliError::Data(format!("bad coefficients {}: {e}", path.display())))?;
    }
    if let Some(path) = lexicon {
        let file = fs::File::open(path)
            .map_err(|e| CliError::Io(format!("cannot open {}: {e}", path.display())))?;
        scoring.lexicon = crate::metrics::LabelLexicon::from_json_reader(BufReader::new(file))
            .map_err(|e| CliError::Data(format!("bad lexicon {}: {e}", path.display())))?;
    }
    if let Some(path) = patterns {
        let file = fs::File::open(path)
            .map_err(|e| CliError::Io(format!("cannot open {}: {e}", path.display())))?;
        scoring.patterns = crate::metrics::PatternSet::from_json_reader(BufReader::new(file))
            .map_err(|e| CliError::Data(format!("bad pattern set {}: {e}", path.display())))?;
    }
    Ok(scoring)
}

fn write_pairs(path: &Path, pairs: &[EvalPair]) -> Result<(), CliError> {
    let mut text = String::new();
    for pair in pairs {
        text.push_str(&serde_json::to_string(pair).expect("serializable"));
        text.push('\n');
    }
    write_text(path, &text)
}

fn read_pairs(path: &Path) -> Result<Vec<EvalPair>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let pair: EvalPair = serde_json::from_str(line)
            .map_err(|e| CliError::Data(format!("line {}: {e}", lineno + 1)))?;
        pairs.push(pair);
    }
    Ok(pairs)
}

fn write_eval_outputs(
    out: &Path,
    pairs: &[EvalPair],
    report: &eval::EvalReport,
) -> Result<(), CliError> {
    fs::create_dir_all(out)?;
    write_pairs(&out.join("pairs.jsonl"), pairs)?;
    write_json(&out.join("report.json"), report)?;
    write_text(&out.join("report.txt"), &render_report_text(report))?;
    if let Some(histogram) = &report.error_histogram {
        write_text(&out.join("error_histogram.csv"), &histogram_csv(histogram))?;
    }
    Ok(())
}

pub fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let records = corpus::filter_corpus(read_corpus_file(&args.corpus)?);
    let backend = make_backend(&args.backend)?;
    let judge = make_judge(&args.judge)?;
    let embedder = make_embedder(&args.embed)?;
    let mut scoring = scoring_config(
        &args.sections,
        args.coefficients.as_deref(),
        args.lexicon.as_deref(),
        args.patterns.as_deref(),
    )?;
    if let Some(seed) = args.seed {
        scoring.bootstrap_seed = seed;
    }

    let pairs =
        match eval::run_inference(&records, backend.as_ref(), args.use_prior, args.max_tokens) {
            Ok(pairs) => pairs,
            Err(EvalError::Backend { completed, message }) => {
                fs::create_dir_all(&args.out)?;
                write_pairs(&args.out.join("pairs.partial.jsonl"), &completed)?;
                write_json(
                    &args.out.join("failure.json"),
                    &serde_json::json!({"error": message, "completed": completed.len()}),
                )?;
                return Err(CliError::Remote(format!(
                    "backend failed; {} partial pairs persisted to {}",
                    completed.len(),
                    args.out.join("pairs.partial.jsonl").display()
                )));
            }
            Err(other) => return Err(map_eval_error(other)),
        };
    let report = eval::score_pairs(&pairs, &scoring, embedder.as_ref(), judge.as_deref())
        .map_err(map_eval_error)?;
    if let Some(failure) = &report.judge_failure {
        eprintln!("warning: judge failed permanently, error fields omitted: {failure}");
    }
    write_eval_outputs(&args.out, &pairs, &report)?;
    let condition = eval::condition_f1(&pairs, &scoring.lexicon).map_err(map_eval_error)?;
    write_text(
        &args.out.join("condition_f1.csv"),
        &condition_csv(&condition),
    )?;
    write_json(&args.out.join("condition_f1.json"), &condition)?;
    println!("{}", render_report_text(&report));
    Ok(())
}

fn map_eval_error(e: EvalError) -> CliError {
    match e {
        EvalError::Corpus(c) => c.into(),
        EvalError::Metrics(m) => CliError::Data(m.to_string()),
        EvalError::Judge(j) => CliError::Remote(j.to_string()),
        EvalError::UnknownAxis(a) => CliError::Usage(format!("unknown axis {a:?}")),
        EvalError::NoPairs => CliError::Data("no pairs to score".into()),
        EvalError::JudgeRequired(axis) => CliError::Usage(format!(
            "axis {axis:?} requires --judge mock or a judge url"
        )),
        EvalError::Backend { message, .. } => CliError::Remote(message),
    }
}

pub fn cmd_stratify(args: StratifyArgs) -> Result<(), CliError> {
    let pairs = read_pairs(&args.pairs)?;
    let axis = StratifyAxis::from_str(&args.axis).map_err(map_eval_error)?;
    let judge = make_judge(&args.judge)?;
    let embedder = MockEmbedder::default();
    let mut scoring = ScoringConfig::default();
    if let Some(seed) = args.seed {
        scoring.bootstrap_seed = seed;
    }
    let table = eval::stratify(&pairs, axis, &scoring, &embedder, judge.as_deref())
        .map_err(map_eval_error)?;
    fs::create_dir_all(&args.out)?;
    write_json(
        &args.out.join(format!("strata_{}.json", axis.name())),
        &table,
    )?;
    write_text(
        &args.out.join(format!("strata_{}.csv", axis.name())),
        &strata_csv(&table),
    )?;
    println!("{}", strata_csv(&table));
    Ok(())
}

pub fn cmd_baseline(args: BaselineArgs) -> Result<(), CliError> {
    let records = corpus::filter_corpus(read_corpus_file(&args.corpus)?);
    let judge = make_judge(&args.judge)?;
    let (pairs, excluded) = eval::copy_prior_baseline(&records).map_err(map_eval_error)?;
    if pairs.is_empty() {
        return Err(CliError::Data(format!(
            "no studies with a prior ({excluded} excluded)"
        )));
    }
    let embedder = MockEmbedder::default();
    let report = eval::score_pairs(
        &pairs,
        &ScoringConfig::default(),
        &embedder,
        judge.as_deref(),
    )
    .map_err(map_eval_error)?;
    write_eval_outputs(&args.out, &pairs, &report)?;
    write_json(
        &args.out.join("baseline_summary.json"),
        &serde_json::json!({"pairs": pairs.len(), "excluded_no_prior": excluded}),
    )?;
    println!(
        "copy-prior baseline: {} pairs, {} studies excluded (no prior)",
        pairs.len(),
        excluded
    );
    println!("{}", render_report_text(&report));
    Ok(())
}

static SHUTDOWN: AtomicBool = AtomicBool::new(false);

extern "C" fn handle_signal(_sig: libc::c_int) {
    SHUTDOWN.store(true, Ordering::SeqCst);
}

pub fn cmd_serve_mock(args: ServeMockArgs) -> Result<(), CliError> {
    let bind = format!("{}:{}", args.host, args.port);
    let mut server =
        MockServer::spawn(&bind).map_err(|e| CliError::Io(format!("cannot bind {bind}: {e}")))?;
    println!("mock server listening on {}", server.url());
    println!("routes: POST /judge/errors /judge/temporal /embed /generate");
    unsafe {
        libc::signal(
            libc::SIGINT,
            handle_signal as *const () as libc::sighandler_t,
        );
        libc::signal(
            libc::SIGTERM,
            handle_signal as *const () as libc::sighandler_t,
        );
    }
    while !SHUTDOWN.load(Ordering::SeqCst) {
        std::thread::sleep(std::time::Duration::from_millis(100));
    }
    println!(
        "shutting down after {} requests (max {} concurrent)",
        server.requests_served(),
        server.max_concurrent_observed()
    );
    server.shutdown();
    Ok(())
}
