use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use kctag_core::{KnowledgeRendering, PromptVariant, ReportFormat, SelectionStrategy};

#[derive(Debug, Parser)]
#[command(name = "kctag", version, about = "Knowledge concept tagging with chat-completion LLMs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tag every pair of a corpus and write a run record.
    Tag(TagArgs),
    /// Score a run record per concept and overall.
    Eval(EvalArgs),
    /// Show the demonstrations a strategy picks for one pair.
    Demos(DemosArgs),
    /// Put two run records side by side with deltas (B minus A).
    Compare(CompareArgs),
    /// Re-run a record from its response cache without calling a backend.
    Replay(ReplayArgs),
    /// Print per-concept question/match/mismatch counts.
    Stats(StatsArgs),
    /// Write the bundled synthetic corpus.
    Synthetic(SyntheticArgs),
}

/// Run settings shared by `tag` and the config file. Flags win over file
/// values, which win over defaults.
#[derive(Debug, Args, Default, Clone)]
pub struct RunFlags {
    /// TOML file with run settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Prompt variant: v1 or v2 [default: v2].
    #[arg(long)]
    pub variant: Option<PromptVariant>,
    /// Knowledge rendering: name or interpreted [default: name].
    #[arg(long)]
    pub rendering: Option<KnowledgeRendering>,
    /// Few-shot strategy as name:count (random, same, match, mismatch,
    /// diverse); omit for zero-shot.
    #[arg(long)]
    pub strategy: Option<SelectionStrategy>,
    /// Ask for confirmation of every positive first answer.
    #[arg(long)]
    pub reflect: bool,
    /// `mock:<script.jsonl>` or `http:<chat-completions URL>`.
    #[arg(long)]
    pub backend: Option<String>,
    /// Environment variable holding the HTTP bearer token [default: OPENAI_API_KEY].
    #[arg(long)]
    pub api_key_env: Option<String>,
    /// Model identifier [default: gpt-4].
    #[arg(long)]
    pub model: Option<String>,
    /// Run seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum pairs in flight [default: 4].
    #[arg(long)]
    pub concurrency: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    /// Precomputed `{question_id, vector}` lines for diverse selection.
    #[arg(long, conflicts_with = "embedding_model")]
    pub embeddings: Option<PathBuf>,
    /// Embed questions with this backend model for diverse selection.
    #[arg(long)]
    pub embedding_model: Option<String>,
    /// Append-only response cache, reused across runs.
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TagArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub run: RunFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub record: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "markdown")]
    pub format: ReportFormat,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DemosArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Target pair as `concept_id/question_id` or a 0-based pair index.
    #[arg(long)]
    pub pair: String,
    #[arg(long)]
    pub strategy: SelectionStrategy,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "name")]
    pub rendering: KnowledgeRendering,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Resolve concept names and order from this corpus.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value = "markdown")]
    pub format: ReportFormat,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub record: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub cache: PathBuf,
    /// Write the replayed record here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
}

#[derive(Debug, Args)]
pub struct SyntheticArgs {
    #[arg(long)]
    pub out: PathBuf,
}
