use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context as _;
use serde::Deserialize;

use kctag_core::eval::{build_record_report, compare, format_metric, render_comparison};
use kctag_core::llm::{BackendConfig, BackendKind};
use kctag_core::pipeline::{load_embeddings, EmbeddingSource, PipelineError};
use kctag_core::rng::derive_seed;
use kctag_core::select::PickOrigin;
use kctag_core::synthetic::synthetic_corpus;
use kctag_core::{
    build_report, corpus_stats, render_report, replay, run_tagging, select_demonstrations, Corpus,
    EmbeddingTable, KnowledgeRendering, LlmClient, PairId, PromptVariant, ResponseCache, RunConfig,
    RunRecord, SelectionStrategy,
};

use crate::args::{
    Cli, Command, CompareArgs, DemosArgs, EvalArgs, ReplayArgs, RunFlags, StatsArgs, SyntheticArgs, TagArgs,
};
use crate::Failure;

const DEFAULT_MODEL: &str = "gpt-4";
const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

pub fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Tag(a) => tag(a),
        Command::Eval(a) => eval(a),
        Command::Demos(a) => demos(a),
        Command::Compare(a) => compare_cmd(a),
        Command::Replay(a) => replay_cmd(a),
        Command::Stats(a) => stats(a),
        Command::Synthetic(a) => synthetic(a),
    }
}

fn load_corpus(path: &Path) -> Result<Corpus, Failure> {
    Corpus::load(path).map_err(|e| Failure::usage(format!("corpus {}: {e}", path.display())))
}

fn load_record(path: &Path) -> Result<RunRecord, Failure> {
    RunRecord::load(path).map_err(|e| Failure::usage(format!("run record {}: {e}", path.display())))
}

fn write_output(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::Runtime)
}

/// Run settings as read from a TOML file. Relative paths are resolved
/// against the file's directory.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    variant: Option<String>,
    rendering: Option<String>,
    strategy: Option<String>,
    reflect: Option<bool>,
    model: Option<String>,
    seed: Option<u64>,
    concurrency: Option<usize>,
    temperature: Option<f64>,
    max_tokens: Option<u32>,
    embeddings: Option<PathBuf>,
    embedding_model: Option<String>,
    cache: Option<PathBuf>,
    backend: Option<BackendConfig>,
}

fn read_file_config(path: &Path) -> Result<FileConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))?;
    let mut cfg: FileConfig =
        toml::from_str(&text).map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let resolve = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    if let Some(p) = cfg.embeddings.as_mut() {
        resolve(p);
    }
    if let Some(p) = cfg.cache.as_mut() {
        resolve(p);
    }
    if let Some(BackendConfig { kind: BackendKind::Mock { script }, .. }) = cfg.backend.as_mut() {
        resolve(script);
    }
    Ok(cfg)
}

fn parse_field<T: std::str::FromStr<Err = String>>(value: Option<String>) -> Result<Option<T>, Failure> {
    value.map(|v| v.parse::<T>().map_err(Failure::Usage)).transpose()
}

fn parse_backend(spec: &str, api_key_env: &str) -> Result<BackendConfig, Failure> {
    match spec.split_once(':') {
        Some(("mock", path)) if !path.is_empty() => Ok(BackendConfig::mock(path)),
        Some(("http", url)) if !url.is_empty() => Ok(BackendConfig::http(url, api_key_env)),
        _ => Err(Failure::usage(format!("backend `{spec}` must be mock:<script> or http:<url>"))),
    }
}

/// Effective run configuration plus the cache path.
fn resolve_run(flags: RunFlags) -> Result<(RunConfig, Option<PathBuf>), Failure> {
    let file = match &flags.config {
        Some(p) => read_file_config(p)?,
        None => FileConfig::default(),
    };
    let api_key_env = flags.api_key_env.clone();
    let mut backend = match flags.backend.as_deref() {
        Some(spec) => parse_backend(spec, api_key_env.as_deref().unwrap_or(DEFAULT_API_KEY_ENV))?,
        None => file
            .backend
            .clone()
            .ok_or_else(|| Failure::usage("no backend: pass --backend or set [backend] in --config"))?,
    };
    if let (Some(env), BackendKind::Http { credential_env, .. }) = (api_key_env, &mut backend.kind) {
        *credential_env = env;
    }
    let mut cfg = RunConfig::new(backend, flags.model.or(file.model).unwrap_or_else(|| DEFAULT_MODEL.into()));
    cfg.variant = match flags.variant {
        Some(v) => v,
        None => parse_field::<PromptVariant>(file.variant)?.unwrap_or(PromptVariant::V2),
    };
    cfg.rendering = match flags.rendering {
        Some(r) => r,
        None => parse_field::<KnowledgeRendering>(file.rendering)?.unwrap_or(KnowledgeRendering::NameOnly),
    };
    cfg.strategy = match flags.strategy {
        Some(s) => Some(s),
        None => parse_field::<SelectionStrategy>(file.strategy)?,
    };
    cfg.reflection = flags.reflect || file.reflect.unwrap_or(false);
    cfg.seed = flags.seed.or(file.seed).unwrap_or(0);
    if let Some(c) = flags.concurrency.or(file.concurrency) {
        cfg.concurrency = c;
    }
    if let Some(t) = flags.temperature.or(file.temperature) {
        cfg.temperature = t;
    }
    if let Some(m) = flags.max_tokens.or(file.max_tokens) {
        cfg.max_tokens = m;
    }
    cfg.embeddings = match (flags.embeddings, flags.embedding_model) {
        (Some(path), _) => Some(EmbeddingSource::File { path }),
        (None, Some(model)) => Some(EmbeddingSource::Backend { model }),
        (None, None) => match (file.embeddings, file.embedding_model) {
            (Some(path), _) => Some(EmbeddingSource::File { path }),
            (None, Some(model)) => Some(EmbeddingSource::Backend { model }),
            (None, None) => None,
        },
    };
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    if let Some(EmbeddingSource::File { path }) = &cfg.embeddings {
        if !path.is_file() {
            return Err(Failure::usage(format!("embeddings file {} not found", path.display())));
        }
    }
    Ok((cfg, flags.cache.or(file.cache)))
}

fn summary_line(record: &RunRecord) -> String {
    let report = build_record_report(record);
    let mut line = String::from("overall:");
    match record.metrics {
        Some(m) => {
            let _ = write!(
                line,
                " accuracy {} precision {} recall {} f1 {}",
                format_metric(m.accuracy),
                format_metric(m.precision),
                format_metric(m.recall),
                format_metric(m.f1)
            );
        }
        None => line.push_str(" no scored samples"),
    }
    let _ = write!(
        line,
        " (scored {}, unparseable {}, errored {}, reflections {})",
        record.counts.total(),
        report.overall.unparseable,
        report.overall.errored,
        record.reflections_issued()
    );
    line
}

fn tag(args: TagArgs) -> Result<(), Failure> {
    let (config, cache_path) = resolve_run(args.run)?;
    let corpus = load_corpus(&args.corpus)?;
    if args.out.is_dir() {
        return Err(Failure::usage(format!("--out {} is a directory", args.out.display())));
    }
    let mut client = LlmClient::from_config(&config.backend).map_err(|e| Failure::usage(e.to_string()))?;
    if let Some(p) = &cache_path {
        let cache =
            ResponseCache::open(p).map_err(|e| Failure::usage(format!("cache {}: {e}", p.display())))?;
        client = client.with_cache(Arc::new(cache));
    }

    let record = run_tagging(&config, &corpus, &client).map_err(|e| match e {
        PipelineError::Config(_) | PipelineError::Prompt(_) => Failure::usage(e.to_string()),
        e => Failure::Runtime(e.into()),
    })?;
    write_output(&args.out, &record.to_jsonl())?;
    for w in &record.warnings {
        eprintln!("warning: {w}");
    }
    println!("{}", summary_line(&record));
    if !record.complete {
        return Err(Failure::Runtime(anyhow::anyhow!(
            "run incomplete; partial record written to {}",
            args.out.display()
        )));
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), Failure> {
    let record = load_record(&args.record)?;
    let corpus = load_corpus(&args.corpus)?;
    let report = build_report(&record, &corpus).map_err(|e| Failure::Runtime(e.into()))?;
    let text = render_report(&report, args.format);
    match &args.out {
        Some(p) => write_output(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn resolve_pair(corpus: &Corpus, spec: &str) -> Result<usize, Failure> {
    if let Ok(i) = spec.parse::<usize>() {
        return if i < corpus.pairs().len() {
            Ok(i)
        } else {
            Err(Failure::usage(format!("pair index {i} out of range (corpus has {})", corpus.pairs().len())))
        };
    }
    let (c, q) = spec
        .split_once('/')
        .ok_or_else(|| Failure::usage(format!("pair `{spec}` must be concept_id/question_id or an index")))?;
    corpus.pair_index(&PairId::new(c, q)).ok_or_else(|| Failure::usage(format!("no pair {spec} in corpus")))
}

fn demos(args: DemosArgs) -> Result<(), Failure> {
    let corpus = load_corpus(&args.corpus)?;
    let index = resolve_pair(&corpus, &args.pair)?;
    let table = match (&args.embeddings, args.strategy.needs_embeddings()) {
        (Some(path), _) => {
            let by_question = load_embeddings(path).map_err(|e| Failure::usage(e.to_string()))?;
            Some(
                EmbeddingTable::for_corpus(&corpus, &by_question, args.seed)
                    .map_err(|e| Failure::usage(e.to_string()))?,
            )
        }
        (None, true) => return Err(Failure::usage(format!("{} needs --embeddings", args.strategy))),
        (None, false) => None,
    };
    let target = corpus.entry(index);
    let target_id = target.pair.id();
    let mut pool = corpus.pool_for(Some(&target_id));
    if let Some(t) = &table {
        pool = pool.with_embeddings(t);
    }
    let seed = derive_seed(args.seed, index as u64);
    let selection = select_demonstrations(args.strategy, &pool, &target, seed, args.rendering)
        .map_err(|e| Failure::Runtime(e.into()))?;

    println!("target {target_id} (pair {index}, label {})", u8::from(target.pair.label));
    println!("strategy {} seed {} (pair seed {seed})", args.strategy, args.seed);
    for (n, (pick, demo)) in selection.picks.iter().zip(&selection.demonstrations).enumerate() {
        let origin = match &pick.origin {
            PickOrigin::Sampled => "sampled".to_string(),
            PickOrigin::Filtered => "filtered".to_string(),
            PickOrigin::Fallback => "fallback".to_string(),
            PickOrigin::Cluster { cluster, distance } => format!("cluster {cluster} distance {distance:.4}"),
        };
        println!();
        println!(
            "#{} pair {} (index {}, label {}) {origin}",
            n + 1,
            pick.pair,
            pick.index,
            u8::from(pick.label)
        );
        println!("Knowledge: {}", demo.knowledge_text);
        println!("Question: {}", demo.question_text);
        println!("Judgement: {}", demo.judgment_text);
    }
    for w in &selection.warnings {
        println!("warning: {w}");
    }
    Ok(())
}

fn compare_cmd(args: CompareArgs) -> Result<(), Failure> {
    let a = load_record(&args.a)?;
    let b = load_record(&args.b)?;
    let (ra, rb) = match &args.corpus {
        Some(p) => {
            let corpus = load_corpus(p)?;
            (
                build_report(&a, &corpus).map_err(|e| Failure::Runtime(e.into()))?,
                build_report(&b, &corpus).map_err(|e| Failure::Runtime(e.into()))?,
            )
        }
        None => (build_record_report(&a), build_record_report(&b)),
    };
    print!("{}", render_comparison(&compare(&ra, &rb), args.format));
    Ok(())
}

fn replay_cmd(args: ReplayArgs) -> Result<(), Failure> {
    let record = load_record(&args.record)?;
    let corpus = load_corpus(&args.corpus)?;
    if !args.cache.is_file() {
        return Err(Failure::usage(format!("cache {} not found", args.cache.display())));
    }
    let cache = ResponseCache::open(&args.cache)
        .map_err(|e| Failure::usage(format!("cache {}: {e}", args.cache.display())))?;
    let replayed = replay(&record, &corpus, Arc::new(cache), None).map_err(|e| Failure::Runtime(e.into()))?;
    if let Some(out) = &args.out {
        write_output(out, &replayed.to_jsonl())?;
    }
    println!("replayed {} samples from cache; identical to the record", replayed.samples.len());
    println!("{}", summary_line(&replayed));
    Ok(())
}

fn stats(args: StatsArgs) -> Result<(), Failure> {
    let corpus = load_corpus(&args.corpus)?;
    let s = corpus_stats(&corpus);
    println!("| Concept | Questions | Match | Mismatch |");
    println!("|---|---|---|---|");
    for r in &s.rows {
        println!("| {} | {} | {} | {} |", r.name, r.counts.questions, r.counts.matches, r.counts.mismatches);
    }
    println!("| Overall | {} | {} | {} |", s.overall.questions, s.overall.matches, s.overall.mismatches);
    if let Some(ratio) = s.mismatch_ratio() {
        println!("\nmismatches per match: {ratio:.2}");
    }
    Ok(())
}

fn synthetic(args: SyntheticArgs) -> Result<(), Failure> {
    let corpus = synthetic_corpus();
    let mut buf = Vec::new();
    corpus.write(&mut buf).map_err(|e| Failure::Runtime(e.into()))?;
    write_output(&args.out, &String::from_utf8(buf).expect("corpus is UTF-8"))?;
    println!("wrote {} pairs to {}", corpus.pairs().len(), args.out.display());
    Ok(())
}
