//! Knowledge concept tagging for math questions with chat-completion LLMs.
//!
//! A run takes a corpus of (concept, question, gold label) pairs and, for
//! each pair, renders a zero- or few-shot instruction prompt, asks a backend
//! for a Yes/No judgment, parses the reply, and optionally asks the backend
//! to confirm each positive answer, flipping it when the model retracts.
//! Everything is recorded in a replayable run record and scored with
//! accuracy, precision, recall and F1.
//!
//! | module | role |
//! |---|---|
//! | [`corpus`] | dataset loading, validation, statistics, demonstration pools |
//! | [`prompt`] | zero-shot, few-shot and reflection prompt builders |
//! | [`select`] | demonstration selection strategies and k-means |
//! | [`llm`] | HTTP and scripted backends, retries, response cache |
//! | [`parse`] | verdict and confirmation parsing |
//! | [`pipeline`] | orchestration and run records |
//! | [`eval`] | confusion counts, metrics, reports |
//!
//! Numeric kernels are generic over [`num::Scalar`], so metrics and
//! clustering can run in `f32`, `f64` or exact rationals.

pub mod corpus;
pub mod eval;
pub mod llm;
pub mod num;
pub mod parse;
pub mod pipeline;
pub mod prompt;
pub mod rng;
pub mod select;
pub mod synthetic;

use num_rational::Rational64;

pub use corpus::{corpus_stats, Corpus, CorpusStats, KnowledgeConcept, Label, LabeledPair, PairId, Question};
pub use eval::{build_report, confusion, metrics, render_report, ConfusionCounts, Report, ReportFormat};
pub use llm::{BackendConfig, LlmClient, ResponseCache};
pub use num::Scalar;
pub use parse::{parse_confirmation, parse_judgment, ConfirmationOutcome, Judgment, Verdict};
pub use pipeline::{replay, run_tagging, RunConfig, RunRecord, SampleResult};
pub use prompt::{KnowledgeRendering, PromptBundle, PromptVariant};
pub use select::{select_demonstrations, SelectionStrategy};

/// Metrics in double precision, as stored in run records.
pub type Metrics = eval::Metrics<f64>;
/// Metrics as exact fractions of the confusion counts.
pub type ExactMetrics = eval::Metrics<Rational64>;
pub type EmbeddingVector = select::EmbeddingVector<f64>;
pub type EmbeddingTable = select::EmbeddingTable<f64>;
pub type Clustering = select::Clustering<f64>;
pub type DemonstrationPool<'a> = select::DemonstrationPool<'a, f64>;
