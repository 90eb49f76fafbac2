//! Per-pair tagging: prompt, complete, parse, optionally reflect on positive
//! verdicts, and persist everything as a replayable run record.
//!
//! Pairs are processed by a bounded pool of scoped worker threads. Results
//! land in a buffer keyed by pair index, so the record is always in corpus
//! order whatever the completion order. The first failing pair stops new
//! pairs from starting; the record is still written, marked incomplete.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Label, PairId};
use crate::eval::{confusion_of, metrics, ConfusionCounts, Metrics};
use crate::llm::{
    BackendConfig, CompletionRequest, LlmClient, LlmError, ResponseCache, DEFAULT_MAX_TOKENS,
    DEFAULT_TEMPERATURE,
};
use crate::parse::{parse_confirmation, parse_judgment, ConfirmationOutcome, Judgment, Verdict};
use crate::prompt::{
    build_few_shot, build_reflection, build_zero_shot, render_knowledge, KnowledgeRendering, PromptBundle,
    PromptError, PromptVariant,
};
use crate::rng::derive_seed;
use crate::select::{
    select_demonstrations, EmbeddingTable, EmbeddingVector, Pick, SelectError, SelectionStrategy,
};

pub const RECORD_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_CONCURRENCY: usize = 4;

fn default_concurrency() -> usize {
    DEFAULT_CONCURRENCY
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("embeddings: {0}")]
    Embeddings(String),
    #[error("reflection requires a positive first verdict")]
    NotPositive,
    #[error("replay incomplete: no cached response for key {key}")]
    ReplayIncomplete { key: String },
    #[error("replay rejected: {0}")]
    ReplayRejected(String),
    #[error("replay diverged from the record at pair {index}")]
    ReplayDiverged { index: usize },
    #[error("run record line {line}: {message}")]
    RecordFormat { line: usize, message: String },
    #[error("I/O: {0}")]
    Io(#[from] io::Error),
}

/// Where diversity selection gets question embeddings from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum EmbeddingSource {
    /// Ask the run's backend with this embedding model.
    Backend { model: String },
    /// Precomputed `{question_id, vector}` lines.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub variant: PromptVariant,
    pub rendering: KnowledgeRendering,
    /// `None` is zero-shot.
    #[serde(default)]
    pub strategy: Option<SelectionStrategy>,
    pub reflection: bool,
    pub backend: BackendConfig,
    pub model: String,
    pub seed: u64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<EmbeddingSource>,
    /// Execution detail, not part of the run's identity.
    #[serde(skip, default = "default_concurrency")]
    pub concurrency: usize,
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

fn default_max_tokens() -> u32 {
    DEFAULT_MAX_TOKENS
}

impl RunConfig {
    /// Zero-shot V2 with concept names, no reflection, seed 0.
    pub fn new(backend: BackendConfig, model: impl Into<String>) -> Self {
        Self {
            variant: PromptVariant::V2,
            rendering: KnowledgeRendering::NameOnly,
            strategy: None,
            reflection: false,
            backend,
            model: model.into(),
            seed: 0,
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            embeddings: None,
            concurrency: DEFAULT_CONCURRENCY,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.backend.validate()?;
        if self.model.trim().is_empty() {
            return Err(PipelineError::Config("model must not be empty".into()));
        }
        if self.concurrency == 0 {
            return Err(PipelineError::Config("concurrency must be at least 1".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(PipelineError::Config(format!("invalid temperature {}", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(PipelineError::Config("max_tokens must be positive".into()));
        }
        if let Some(s) = self.strategy {
            if s.count() == 0 {
                return Err(PipelineError::Config("strategy count must be at least 1".into()));
            }
            if s.needs_embeddings() && self.embeddings.is_none() {
                return Err(PipelineError::Config(format!("{s} needs an embedding source")));
            }
        }
        Ok(())
    }

    /// Equal as runs: everything but execution details.
    pub fn same_run(&self, other: &RunConfig) -> bool {
        let mut o = other.clone();
        o.concurrency = self.concurrency;
        *self == o
    }

    fn request(&self, bundle: &PromptBundle) -> CompletionRequest {
        CompletionRequest {
            model: self.model.clone(),
            messages: bundle.messages().to_vec(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confirmation {
    pub outcome: ConfirmationOutcome,
    pub raw: String,
}

/// Wall-clock latencies; excluded from canonical comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timing {
    pub first_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reflection_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    /// Position of the pair in the corpus.
    pub index: usize,
    #[serde(flatten)]
    pub pair: PairId,
    pub gold: Label,
    #[serde(default)]
    pub demonstrations: Vec<Pick>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first: Option<Judgment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confirmation: Option<Confirmation>,
    /// `None` only for errored samples.
    #[serde(default, rename = "final", skip_serializing_if = "Option::is_none")]
    pub final_verdict: Option<Verdict>,
    /// First-pass prompt, then the reflection prompt when one was sent.
    #[serde(default)]
    pub fingerprints: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

impl SampleResult {
    fn new(index: usize, pair: PairId, gold: Label) -> Self {
        Self {
            index,
            pair,
            gold,
            demonstrations: Vec::new(),
            first: None,
            confirmation: None,
            final_verdict: None,
            fingerprints: Vec::new(),
            error: None,
            timing: None,
        }
    }

    pub fn is_errored(&self) -> bool {
        self.error.is_some()
    }

    /// Gold label and final verdict, unless the sample errored.
    pub fn scored(&self) -> Option<(Label, Verdict)> {
        match (&self.error, self.final_verdict) {
            (None, Some(v)) => Some((self.gold, v)),
            _ => None,
        }
    }

    pub fn first_verdict(&self) -> Option<Verdict> {
        self.first.as_ref().map(|j| j.verdict)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub config: RunConfig,
    pub samples: Vec<SampleResult>,
    pub warnings: Vec<String>,
    pub complete: bool,
    pub counts: ConfusionCounts,
    /// `None` when nothing was scored.
    pub metrics: Option<Metrics<f64>>,
}

#[derive(Serialize, Deserialize)]
struct Execution {
    concurrency: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum RecordLine {
    Header {
        format_version: u32,
        config: RunConfig,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        execution: Option<Execution>,
    },
    Sample(SampleResult),
    Summary {
        complete: bool,
        warnings: Vec<String>,
        counts: ConfusionCounts,
        #[serde(default)]
        metrics: Option<Metrics<f64>>,
    },
}

impl RunRecord {
    fn from_samples(
        config: RunConfig,
        samples: Vec<SampleResult>,
        warnings: Vec<String>,
        complete: bool,
    ) -> Self {
        let counts = confusion_of(&samples);
        Self { metrics: metrics::<f64>(&counts).ok(), counts, config, samples, warnings, complete }
    }

    fn lines(&self, with_timing: bool) -> Vec<RecordLine> {
        let mut lines = Vec::with_capacity(self.samples.len() + 2);
        lines.push(RecordLine::Header {
            format_version: RECORD_FORMAT_VERSION,
            config: self.config.clone(),
            execution: with_timing.then_some(Execution { concurrency: self.config.concurrency }),
        });
        for s in &self.samples {
            let mut s = s.clone();
            if !with_timing {
                s.timing = None;
            }
            lines.push(RecordLine::Sample(s));
        }
        lines.push(RecordLine::Summary {
            complete: self.complete,
            warnings: self.warnings.clone(),
            counts: self.counts,
            metrics: self.metrics,
        });
        lines
    }

    fn render(&self, with_timing: bool) -> String {
        let mut out = String::new();
        for line in self.lines(with_timing) {
            out.push_str(&serde_json::to_string(&line).expect("record lines serialize"));
            out.push('\n');
        }
        out
    }

    /// Full JSON-lines form, including timing and execution details.
    pub fn to_jsonl(&self) -> String {
        self.render(true)
    }

    /// JSON-lines form without timing or execution details; equal for any
    /// two runs of the same configuration over the same inputs.
    pub fn canonical(&self) -> String {
        self.render(false)
    }

    pub fn write(&self, mut w: impl Write) -> io::Result<()> {
        w.write_all(self.to_jsonl().as_bytes())?;
        w.flush()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> io::Result<()> {
        self.write(io::BufWriter::new(File::create(path)?))
    }

    pub fn read(reader: impl BufRead) -> Result<Self, PipelineError> {
        let mut config = None;
        let mut samples = Vec::new();
        let mut summary = None;
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| PipelineError::RecordFormat { line: n + 1, message };
            let parsed: RecordLine = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
            match parsed {
                RecordLine::Header { format_version, config: mut c, execution } => {
                    if config.is_some() {
                        return Err(bad("second header".into()));
                    }
                    if format_version != RECORD_FORMAT_VERSION {
                        return Err(bad(format!("unsupported format version {format_version}")));
                    }
                    if let Some(e) = execution {
                        c.concurrency = e.concurrency;
                    }
                    config = Some(c);
                }
                _ if config.is_none() => return Err(bad("record must start with a header".into())),
                _ if summary.is_some() => return Err(bad("content after the summary".into())),
                RecordLine::Sample(s) => samples.push(s),
                RecordLine::Summary { complete, warnings, .. } => summary = Some((complete, warnings)),
            }
        }
        let config = config.ok_or(PipelineError::RecordFormat { line: 0, message: "empty record".into() })?;
        let (complete, warnings) = summary.unwrap_or((false, Vec::new()));
        Ok(Self::from_samples(config, samples, warnings, complete))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        Self::read(BufReader::new(File::open(path)?))
    }

    pub fn reflections_issued(&self) -> usize {
        self.samples.iter().filter(|s| s.confirmation.is_some()).count()
    }
}

#[derive(Deserialize)]
struct EmbeddingLine {
    question_id: String,
    vector: Vec<f64>,
}

/// Reads `{question_id, vector}` lines.
pub fn load_embeddings(
    path: impl AsRef<Path>,
) -> Result<HashMap<String, EmbeddingVector<f64>>, PipelineError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| PipelineError::Embeddings(format!("{}: {e}", path.display())))?;
    let mut out = HashMap::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| PipelineError::Embeddings(format!("{}:{}: {m}", path.display(), n + 1));
        let e: EmbeddingLine = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let v = EmbeddingVector::new(e.vector).map_err(|e| bad(e.to_string()))?;
        out.insert(e.question_id, v);
    }
    Ok(out)
}

fn embedding_table(
    config: &RunConfig,
    corpus: &Corpus,
    client: &LlmClient,
) -> Result<EmbeddingTable<f64>, PipelineError> {
    let by_question = match config.embeddings.as_ref() {
        Some(EmbeddingSource::File { path }) => load_embeddings(path)?,
        Some(EmbeddingSource::Backend { model }) => {
            let mut seen = HashSet::new();
            let questions: Vec<&str> =
                corpus.pairs().iter().map(|p| p.question_id.as_str()).filter(|q| seen.insert(*q)).collect();
            let texts: Vec<String> = questions
                .iter()
                .map(|q| corpus.question(q).expect("validated corpus").text.clone())
                .collect();
            let vectors = client.embed(model, &texts)?;
            questions.into_iter().map(str::to_string).zip(vectors).collect()
        }
        None => return Err(PipelineError::Config("diverse selection needs an embedding source".into())),
    };
    Ok(EmbeddingTable::for_corpus(corpus, &by_question, config.seed)?)
}

struct Context<'a> {
    config: &'a RunConfig,
    corpus: &'a Corpus,
    client: &'a LlmClient,
    table: Option<EmbeddingTable<f64>>,
}

impl Context<'_> {
    /// Always returns a sample; on failure it carries the error message and
    /// whatever was computed before the failure.
    fn process(&self, index: usize) -> Processed {
        let entry = self.corpus.entry(index);
        let mut sample = SampleResult::new(index, entry.pair.id(), entry.pair.label);
        let mut warnings = Vec::new();
        let outcome = self.try_process(index, &mut sample, &mut warnings);
        match outcome {
            Ok(()) => (sample, None, warnings),
            Err(e) => {
                sample.error = Some(e.to_string());
                sample.final_verdict = None;
                (sample, Some(e), warnings)
            }
        }
    }

    fn try_process(
        &self,
        index: usize,
        sample: &mut SampleResult,
        warnings: &mut Vec<String>,
    ) -> Result<(), PipelineError> {
        let cfg = self.config;
        let entry = self.corpus.entry(index);
        let knowledge = render_knowledge(entry.concept, cfg.rendering)?;
        let bundle = match cfg.strategy {
            None => build_zero_shot(cfg.variant, &knowledge, &entry.question.text)?,
            Some(strategy) => {
                let mut pool = self.corpus.pool_for(Some(&sample.pair));
                if let Some(t) = &self.table {
                    pool = pool.with_embeddings(t);
                }
                let seed = derive_seed(cfg.seed, index as u64);
                let selection = select_demonstrations(strategy, &pool, &entry, seed, cfg.rendering)?;
                warnings.extend(selection.warnings);
                sample.demonstrations = selection.picks;
                build_few_shot(cfg.variant, &selection.demonstrations, &knowledge, &entry.question.text)?
            }
        };
        sample.fingerprints.push(bundle.fingerprint().to_string());
        let start = Instant::now();
        let reply = self.client.complete(&cfg.request(&bundle))?;
        sample.timing = Some(Timing { first_ms: start.elapsed().as_millis() as u64, reflection_ms: None });
        let first = parse_judgment(&reply.content);
        sample.final_verdict = Some(first.verdict);
        let positive = first.verdict.is_positive();
        sample.first = Some(first);
        if cfg.reflection && positive {
            reflect_into(cfg, self.client, &bundle, sample)?;
        }
        Ok(())
    }
}

fn reflect_into(
    config: &RunConfig,
    client: &LlmClient,
    first_prompt: &PromptBundle,
    sample: &mut SampleResult,
) -> Result<(), PipelineError> {
    let first =
        sample.first.as_ref().filter(|j| j.verdict.is_positive()).ok_or(PipelineError::NotPositive)?;
    let bundle = build_reflection(first_prompt, &first.raw)?;
    sample.fingerprints.push(bundle.fingerprint().to_string());
    let start = Instant::now();
    let reply = client.complete(&config.request(&bundle))?;
    if let Some(t) = sample.timing.as_mut() {
        t.reflection_ms = Some(start.elapsed().as_millis() as u64);
    }
    let outcome = parse_confirmation(&reply.content);
    sample.final_verdict = Some(match outcome {
        ConfirmationOutcome::Overturned => Verdict::Negative,
        ConfirmationOutcome::Confirmed | ConfirmationOutcome::Ambiguous => Verdict::Positive,
    });
    sample.confirmation = Some(Confirmation { outcome, raw: reply.content });
    Ok(())
}

/// Sends the single confirmation turn for a first-pass positive sample.
///
/// `first_prompt` must be the prompt that produced `first`. An overturn makes
/// the final verdict negative; a confirmation or an ambiguous reply keeps it
/// positive.
pub fn reflect(
    config: &RunConfig,
    client: &LlmClient,
    first_prompt: &PromptBundle,
    first: SampleResult,
) -> Result<SampleResult, PipelineError> {
    let mut sample = first;
    reflect_into(config, client, first_prompt, &mut sample)?;
    Ok(sample)
}

struct Outcome {
    record: RunRecord,
    /// Lowest-index failure, if any.
    failure: Option<(usize, PipelineError)>,
}

fn prevalidate(config: &RunConfig, corpus: &Corpus) -> Result<(), PipelineError> {
    config.validate()?;
    if config.rendering == KnowledgeRendering::Interpreted {
        if let Some(c) = corpus.concepts().iter().find(|c| c.definition.trim().is_empty()) {
            return Err(PromptError::MissingDefinition(c.id.clone()).into());
        }
    }
    if let Some(strategy) = config.strategy {
        // The smallest pool belongs to the pair whose question text recurs most.
        let mut per_text: HashMap<&str, usize> = HashMap::new();
        for i in 0..corpus.pairs().len() {
            *per_text.entry(corpus.entry(i).question.text.as_str()).or_default() += 1;
        }
        let largest_share = per_text.values().copied().max().unwrap_or(0);
        let smallest_pool = corpus.pairs().len() - largest_share;
        if !corpus.pairs().is_empty() && smallest_pool < strategy.count() {
            return Err(PipelineError::Config(format!(
                "{strategy} needs {} demonstrations but some pairs have only {smallest_pool} candidates",
                strategy.count()
            )));
        }
    }
    Ok(())
}

/// One pair's result, the error that stopped it and its warnings.
type Processed = (SampleResult, Option<PipelineError>, Vec<String>);

fn run_inner(config: &RunConfig, corpus: &Corpus, client: &LlmClient) -> Result<Outcome, PipelineError> {
    prevalidate(config, corpus)?;
    let table = match config.strategy {
        Some(s) if s.needs_embeddings() => Some(embedding_table(config, corpus, client)?),
        _ => None,
    };
    let ctx = Context { config, corpus, client, table };
    let n = corpus.pairs().len();
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<Processed>>> = Mutex::new((0..n).map(|_| None).collect());
    let workers = config.concurrency.min(n).max(1);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let result = ctx.process(i);
                if result.1.is_some() {
                    abort.store(true, Ordering::SeqCst);
                }
                slots.lock().expect("result buffer poisoned")[i] = Some(result);
            });
        }
    });

    let mut samples = Vec::with_capacity(n);
    let mut warnings = Vec::new();
    let mut failure = None;
    for slot in slots.into_inner().expect("result buffer poisoned") {
        let Some((sample, error, w)) = slot else { continue };
        warnings.extend(w);
        if let Some(e) = error {
            warnings.push(format!("pair {} errored: {e}", sample.pair));
            failure.get_or_insert((sample.index, e));
        }
        samples.push(sample);
    }
    let complete = failure.is_none() && samples.len() == n;
    if failure.is_some() && samples.len() < n {
        warnings.push(format!("run stopped early: {} of {n} pairs processed", samples.len()));
    }
    Ok(Outcome { record: RunRecord::from_samples(config.clone(), samples, warnings, complete), failure })
}

/// Tags every corpus pair.
///
/// Configuration problems fail before any backend call. A pair whose
/// backend call fails is kept as an errored sample (excluded from metrics),
/// no further pairs are started, and the record comes back with
/// `complete == false`.
pub fn run_tagging(
    config: &RunConfig,
    corpus: &Corpus,
    client: &LlmClient,
) -> Result<RunRecord, PipelineError> {
    let outcome = run_inner(config, corpus, client)?;
    if let Some((i, e)) = &outcome.failure {
        log::warn!("run aborted at pair {i}: {e}");
    }
    Ok(outcome.record)
}

fn replay_error(e: PipelineError) -> PipelineError {
    match e {
        PipelineError::Llm(LlmError::CacheMiss { key }) => PipelineError::ReplayIncomplete { key },
        e => e,
    }
}

/// Re-runs a complete record using only cached responses.
///
/// The record's own configuration is authoritative: if `expected` is given
/// and describes a different run, replay is refused. The result equals
/// `record` except for timing.
pub fn replay(
    record: &RunRecord,
    corpus: &Corpus,
    cache: Arc<ResponseCache>,
    expected: Option<&RunConfig>,
) -> Result<RunRecord, PipelineError> {
    if !record.complete {
        return Err(PipelineError::ReplayRejected("record is incomplete".into()));
    }
    if let Some(cfg) = expected {
        if !record.config.same_run(cfg) {
            return Err(PipelineError::ReplayRejected(
                "configuration differs from the record's snapshot".into(),
            ));
        }
    }
    let client = LlmClient::cache_only(record.config.backend.kind_name(), cache);
    let outcome = run_inner(&record.config, corpus, &client).map_err(replay_error)?;
    if let Some((_, e)) = outcome.failure {
        return Err(replay_error(e));
    }
    let replayed = outcome.record;
    if replayed.samples.len() != record.samples.len() {
        return Err(PipelineError::ReplayDiverged {
            index: replayed.samples.len().min(record.samples.len()),
        });
    }
    for (a, b) in record.samples.iter().zip(&replayed.samples) {
        let (mut a, mut b) = (a.clone(), b.clone());
        a.timing = None;
        b.timing = None;
        if a != b {
            return Err(PipelineError::ReplayDiverged { index: a.index });
        }
    }
    Ok(replayed)
}
