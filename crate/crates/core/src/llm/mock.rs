//! Scripted, deterministic backend for offline runs and tests.
//!
//! A script is a JSON-lines file of rules:
//!
//! ```text
//! {"pattern": "Confirmation:", "reply": "The prior answer is correct."}
//! {"pattern": "tens and \\( \\) ones", "pattern_kind": "regex", "reply": "Yes, ..."}
//! {"pattern": "Question:", "occurrence": 3, "reply": "No."}
//! {"default": true, "reply": "No, the knowledge does not match the question."}
//! ```
//!
//! Rules are tried in file order against the flattened prompt; the first
//! match wins. `occurrence` restricts a rule to prompts in which the pattern
//! matches exactly that many times (e.g. the number of `Question:` blocks, or
//! a second `Judgement` turn). Exactly one `default` rule is required and
//! answers when nothing else matches. A rule may carry `"fail": "transient"`
//! (or `rate_limit`, `auth`, `malformed`) to script backend failures.
//!
//! An optional settings line `{"embedding_dim": 64, "embedding_seed": 0}`
//! configures [`mock_embedding`].

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{flatten_messages, Backend, BackendError, CompletionRequest, LlmError};

pub const DEFAULT_EMBEDDING_DIM: usize = 64;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternKind {
    #[default]
    Substring,
    Regex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedFailure {
    Transient,
    RateLimit,
    Auth,
    Malformed,
}

impl ScriptedFailure {
    fn to_error(self) -> BackendError {
        match self {
            ScriptedFailure::Transient => BackendError::Transport("scripted transient failure".into()),
            ScriptedFailure::RateLimit => BackendError::RateLimited("scripted rate limit".into()),
            ScriptedFailure::Auth => BackendError::Auth("scripted authentication failure".into()),
            ScriptedFailure::Malformed => BackendError::Malformed("scripted malformed reply".into()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RuleSpec {
    #[serde(default)]
    pattern: Option<String>,
    #[serde(default)]
    pattern_kind: PatternKind,
    #[serde(default)]
    occurrence: Option<usize>,
    #[serde(default)]
    reply: String,
    #[serde(default)]
    default: bool,
    #[serde(default)]
    fail: Option<ScriptedFailure>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Settings {
    embedding_dim: usize,
    #[serde(default)]
    embedding_seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ScriptLine {
    Settings(Settings),
    Rule(RuleSpec),
}

#[derive(Debug, Clone)]
enum Matcher {
    Substring(String),
    Regex(Regex),
}

impl Matcher {
    fn count(&self, text: &str) -> usize {
        match self {
            Matcher::Substring(s) => text.matches(s.as_str()).count(),
            Matcher::Regex(r) => r.find_iter(text).count(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MockRule {
    matcher: Option<Matcher>,
    occurrence: Option<usize>,
    pub reply: String,
    pub default: bool,
    pub fail: Option<ScriptedFailure>,
}

impl MockRule {
    pub fn substring(pattern: impl Into<String>, reply: impl Into<String>) -> Self {
        Self {
            matcher: Some(Matcher::Substring(pattern.into())),
            occurrence: None,
            reply: reply.into(),
            default: false,
            fail: None,
        }
    }

    pub fn regex(pattern: &str, reply: impl Into<String>) -> Result<Self, LlmError> {
        let re = Regex::new(pattern).map_err(|e| LlmError::Script(format!("invalid pattern: {e}")))?;
        Ok(Self {
            matcher: Some(Matcher::Regex(re)),
            occurrence: None,
            reply: reply.into(),
            default: false,
            fail: None,
        })
    }

    pub fn default_reply(reply: impl Into<String>) -> Self {
        Self { matcher: None, occurrence: None, reply: reply.into(), default: true, fail: None }
    }

    pub fn with_occurrence(mut self, n: usize) -> Self {
        self.occurrence = Some(n);
        self
    }

    pub fn failing(mut self, failure: ScriptedFailure) -> Self {
        self.fail = Some(failure);
        self
    }

    fn matches(&self, text: &str) -> bool {
        let Some(m) = &self.matcher else { return false };
        let n = m.count(text);
        match self.occurrence {
            Some(want) => n == want,
            None => n > 0,
        }
    }

    fn from_spec(spec: RuleSpec) -> Result<Self, LlmError> {
        let matcher = match (spec.pattern, spec.pattern_kind) {
            (None, _) => None,
            (Some(p), PatternKind::Substring) => Some(Matcher::Substring(p)),
            (Some(p), PatternKind::Regex) => Some(Matcher::Regex(
                Regex::new(&p).map_err(|e| LlmError::Script(format!("invalid pattern `{p}`: {e}")))?,
            )),
        };
        if matcher.is_none() && !spec.default {
            return Err(LlmError::Script("non-default rule without a pattern".into()));
        }
        Ok(Self {
            matcher,
            occurrence: spec.occurrence,
            reply: spec.reply,
            default: spec.default,
            fail: spec.fail,
        })
    }
}

#[derive(Debug, Clone)]
pub struct MockScript {
    rules: Vec<MockRule>,
    default: usize,
    pub embedding_dim: usize,
    pub embedding_seed: u64,
}

impl MockScript {
    pub fn new(rules: Vec<MockRule>) -> Result<Self, LlmError> {
        let defaults: Vec<usize> =
            rules.iter().enumerate().filter(|(_, r)| r.default).map(|(i, _)| i).collect();
        match defaults.as_slice() {
            [d] => Ok(Self { default: *d, rules, embedding_dim: DEFAULT_EMBEDDING_DIM, embedding_seed: 0 }),
            [] => Err(LlmError::Script("script has no default rule".into())),
            _ => Err(LlmError::Script("script has more than one default rule".into())),
        }
    }

    pub fn parse(text: &str) -> Result<Self, LlmError> {
        let mut rules = Vec::new();
        let mut settings = None;
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ScriptLine =
                serde_json::from_str(line).map_err(|e| LlmError::Script(format!("line {}: {e}", n + 1)))?;
            match parsed {
                ScriptLine::Settings(s) => settings = Some(s),
                ScriptLine::Rule(r) => rules.push(
                    MockRule::from_spec(r).map_err(|e| LlmError::Script(format!("line {}: {e}", n + 1)))?,
                ),
            }
        }
        let mut script = Self::new(rules)?;
        if let Some(s) = settings {
            if s.embedding_dim < 2 {
                return Err(LlmError::Script("embedding_dim must be at least 2".into()));
            }
            script.embedding_dim = s.embedding_dim;
            script.embedding_seed = s.embedding_seed;
        }
        Ok(script)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Script(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// The rule that answers `request`.
    pub fn resolve(&self, request: &CompletionRequest) -> &MockRule {
        let text = flatten_messages(&request.messages);
        self.rules.iter().find(|r| !r.default && r.matches(&text)).unwrap_or(&self.rules[self.default])
    }
}

/// Reply text the script gives for `request`, or the scripted failure.
pub fn mock_resolve(script: &MockScript, request: &CompletionRequest) -> Result<String, BackendError> {
    let rule = script.resolve(request);
    match rule.fail {
        Some(f) => Err(f.to_error()),
        None => Ok(rule.reply.clone()),
    }
}

#[derive(Debug)]
pub struct MockBackend {
    script: MockScript,
    calls: AtomicUsize,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        Self { script, calls: AtomicUsize::new(0) }
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for MockBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        mock_resolve(&self.script, request)
    }

    fn embed(&self, _model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(texts
            .iter()
            .map(|t| mock_embedding(t, self.script.embedding_dim, self.script.embedding_seed))
            .collect())
    }
}

fn fnv1a(seed: u64, parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(parts.iter().flat_map(|p| p.iter())) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Folded feature-hash embedding of `text`.
///
/// The lowercased text contributes its alphanumeric words (weight 1.0) and
/// its character trigrams (weight 0.5). Each feature is hashed with seeded
/// 64-bit FNV-1a; the hash modulo `dim - 1` picks a bucket and its top bit
/// the sign. The last component is the whole-text hash mapped to [-0.05,
/// 0.05], so distinct texts differ somewhere even when their bags of
/// features coincide. Similar questions share features and land close
/// together, which is what clustering tests need.
pub fn mock_embedding(text: &str, dim: usize, seed: u64) -> Vec<f64> {
    assert!(dim >= 2, "mock embedding needs at least two dimensions");
    let buckets = (dim - 1) as u64;
    let mut v = vec![0.0; dim];
    let mut add = |feature: &[u8], weight: f64| {
        let h = fnv1a(seed, &[feature]);
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        v[(h % buckets) as usize] += sign * weight;
    };
    let lower = text.to_lowercase();
    for word in lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
        add(word.as_bytes(), 1.0);
    }
    let chars: Vec<char> = lower.chars().collect();
    let mut buf = String::new();
    for w in chars.windows(3) {
        buf.clear();
        buf.extend(w.iter());
        add(buf.as_bytes(), 0.5);
    }
    let whole = fnv1a(seed, &[&[0xff], text.as_bytes()]);
    v[dim - 1] = (whole as f64 / u64::MAX as f64 * 2.0 - 1.0) * 0.05;
    v
}
