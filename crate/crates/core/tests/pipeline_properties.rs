use std::sync::{Arc, LazyLock};

use proptest::prelude::*;

use kctag_core::llm::{MockBackend, MockRule, MockScript, RetryPolicy, ScriptedFailure};
use kctag_core::pipeline::{EmbeddingSource, PipelineError};
use kctag_core::{
    replay, run_tagging, BackendConfig, ConfirmationOutcome, Corpus, KnowledgeRendering, Label, LlmClient,
    PromptVariant, ResponseCache, RunConfig, RunRecord, SelectionStrategy, Verdict,
};

const DIR: &str = env!("CARGO_MANIFEST_DIR");

static CORPUS: LazyLock<Corpus> =
    LazyLock::new(|| Corpus::load(format!("{DIR}/tests/fixtures/tagging_corpus.jsonl")).unwrap());

fn script_path() -> String {
    format!("{DIR}/tests/fixtures/tagging_script.jsonl")
}

fn fixture_client() -> LlmClient {
    let mut backend = BackendConfig::mock(script_path());
    backend.retry = RetryPolicy { max_attempts: 2, backoff_base_ms: 0 };
    LlmClient::from_config(&backend).unwrap()
}

fn config() -> RunConfig {
    RunConfig::new(BackendConfig::mock(script_path()), "mock-gpt-4")
}

fn strategy() -> impl Strategy<Value = Option<SelectionStrategy>> {
    prop_oneof![
        Just(None),
        (1usize..=3).prop_map(|n| Some(SelectionStrategy::Random(n))),
        (1usize..=3).prop_map(|n| Some(SelectionStrategy::SameKnowledge(n))),
        (1usize..=3).prop_map(|n| Some(SelectionStrategy::MatchOnly(n))),
        (1usize..=3).prop_map(|n| Some(SelectionStrategy::MismatchOnly(n))),
        (1usize..=3).prop_map(|n| Some(SelectionStrategy::Diverse(n))),
    ]
}

fn check_gating(record: &RunRecord, reflection: bool) -> Result<(), TestCaseError> {
    prop_assert_eq!(record.samples.len(), CORPUS.pairs().len());
    for (i, (s, p)) in record.samples.iter().zip(CORPUS.pairs()).enumerate() {
        prop_assert_eq!(s.index, i);
        prop_assert_eq!(&s.pair, &p.id());
        prop_assert_eq!(s.gold, p.label);
        let first = s.first_verdict().unwrap();
        prop_assert_eq!(s.confirmation.is_some(), reflection && first == Verdict::Positive);
        let expected = match &s.confirmation {
            Some(c) if c.outcome == ConfirmationOutcome::Overturned => Verdict::Negative,
            _ => first,
        };
        prop_assert_eq!(s.final_verdict, Some(expected));
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn reflection_is_gated_on_positive_first_answers(
        strategy in strategy(),
        seed in any::<u64>(),
        reflection in any::<bool>(),
        v2 in any::<bool>(),
        interpreted in any::<bool>(),
    ) {
        let mut cfg = config();
        cfg.strategy = strategy;
        cfg.seed = seed;
        cfg.reflection = reflection;
        cfg.variant = if v2 { PromptVariant::V2 } else { PromptVariant::V1 };
        // Interpreted knowledge changes the prompt, so the script falls back
        // to its default reply; gating must hold either way.
        cfg.rendering = if interpreted { KnowledgeRendering::Interpreted } else { KnowledgeRendering::NameOnly };
        if strategy.is_some_and(|s| s.needs_embeddings()) {
            cfg.embeddings = Some(EmbeddingSource::Backend { model: "mock-embed".into() });
        }
        let client = fixture_client();
        let record = run_tagging(&cfg, &CORPUS, &client).unwrap();
        prop_assert!(record.complete);
        check_gating(&record, reflection)?;
        let positives = record.samples.iter().filter(|s| s.first_verdict() == Some(Verdict::Positive)).count();
        prop_assert_eq!(record.reflections_issued(), if reflection { positives } else { 0 });
        let embed_calls = usize::from(cfg.embeddings.is_some());
        prop_assert_eq!(client.backend_calls(), CORPUS.pairs().len() + record.reflections_issued() + embed_calls);

        // Same inputs, same record; the text form round-trips.
        let again = run_tagging(&cfg, &CORPUS, &fixture_client()).unwrap();
        prop_assert_eq!(again.canonical(), record.canonical());
        let parsed = RunRecord::read(record.to_jsonl().as_bytes()).unwrap();
        prop_assert_eq!(parsed.to_jsonl(), record.to_jsonl());
    }
}

#[test]
fn echoing_gold_labels_scores_perfectly() {
    let mut rules = Vec::new();
    for i in 0..CORPUS.pairs().len() {
        let e = CORPUS.entry(i);
        let pattern = format!(
            "Knowledge: {}\nQuestion: {}\nJudgement:$",
            regex::escape(&e.concept.name),
            regex::escape(&e.question.text)
        );
        let reply = if e.pair.label == Label::Match { "Yes, it matches." } else { "No, it does not." };
        rules.push(MockRule::regex(&pattern, reply).unwrap());
    }
    rules.push(MockRule::default_reply("unexpected prompt"));
    let backend = Arc::new(MockBackend::new(MockScript::new(rules).unwrap()));
    let client = LlmClient::new("mock", backend, RetryPolicy::default());
    let record = run_tagging(&config(), &CORPUS, &client).unwrap();
    let m = record.metrics.unwrap();
    assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
}

#[test]
fn backend_failure_leaves_an_incomplete_record() {
    let rules = vec![
        MockRule::substring("Question: Calculation: 14 x 0.016", "").failing(ScriptedFailure::Transient),
        MockRule::default_reply("No, the knowledge does not match the question."),
    ];
    let backend = Arc::new(MockBackend::new(MockScript::new(rules).unwrap()));
    let client = LlmClient::new("mock", backend.clone(), RetryPolicy { max_attempts: 3, backoff_base_ms: 0 });
    let mut cfg = config();
    cfg.concurrency = 1;
    let record = run_tagging(&cfg, &CORPUS, &client).unwrap();
    assert!(!record.complete);
    let errored: Vec<_> = record.samples.iter().filter(|s| s.is_errored()).collect();
    assert_eq!(errored.len(), 1);
    assert_eq!(errored[0].final_verdict, None);
    assert!(record.warnings.iter().any(|w| w.contains(&errored[0].pair.to_string())));
    // Errored samples are not scored.
    let scored = record.samples.iter().filter(|s| !s.is_errored()).count();
    assert_eq!(record.counts.total(), scored);

    let parsed = RunRecord::read(record.to_jsonl().as_bytes()).unwrap();
    assert!(!parsed.complete);
    let cache = Arc::new(ResponseCache::in_memory());
    assert!(matches!(replay(&parsed, &CORPUS, cache, None), Err(PipelineError::ReplayRejected(_))));
}

#[test]
fn configuration_errors_precede_backend_calls() {
    let client = fixture_client();
    let mut cfg = config();
    cfg.strategy = Some(SelectionStrategy::Diverse(2));
    assert!(matches!(run_tagging(&cfg, &CORPUS, &client), Err(PipelineError::Config(_))));
    cfg.strategy = Some(SelectionStrategy::Random(50));
    assert!(run_tagging(&cfg, &CORPUS, &client).is_err());
    assert_eq!(client.backend_calls(), 0);
}

#[test]
fn replay_refuses_a_different_configuration() {
    let cache = Arc::new(ResponseCache::in_memory());
    let client = fixture_client().with_cache(Arc::clone(&cache));
    let cfg = config();
    let record = run_tagging(&cfg, &CORPUS, &client).unwrap();
    let mut other = cfg.clone();
    other.seed = 1;
    other.reflection = true;
    assert!(matches!(
        replay(&record, &CORPUS, Arc::clone(&cache), Some(&other)),
        Err(PipelineError::ReplayRejected(_))
    ));
    let mut relaxed = cfg.clone();
    relaxed.concurrency = 1;
    let replayed = replay(&record, &CORPUS, cache, Some(&relaxed)).unwrap();
    assert_eq!(replayed.canonical(), record.canonical());
}
