//! Chat-completion and embedding backends behind one retrying, caching client.

mod cache;
mod http;
mod mock;

use std::fmt;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{CachedValue, ResponseCache};
pub use http::HttpBackend;
pub use mock::{mock_embedding, MockBackend, MockRule, MockScript, PatternKind, ScriptedFailure};

use crate::select::EmbeddingVector;

pub const DEFAULT_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_MAX_TOKENS: u32 = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

/// Joins a transcript into one block. Assistant turns continue the previous
/// line after a space; everything else starts a new line.
pub fn flatten_messages(messages: &[ChatMessage]) -> String {
    let mut out = String::new();
    for (i, m) in messages.iter().enumerate() {
        if i > 0 {
            out.push(if m.role == Role::Assistant { ' ' } else { '\n' });
        }
        out.push_str(&m.content);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl CompletionRequest {
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self {
            model: model.into(),
            messages,
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }

    fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("no messages".into()));
        }
        if self.messages.iter().any(|m| m.role == Role::User && m.content.is_empty()) {
            return Err(LlmError::InvalidRequest("empty user message".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} must be a finite value >= 0",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResponse {
    pub content: String,
    pub model: String,
    pub latency: Duration,
    pub from_cache: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles for each further attempt.
    pub backoff_base_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, backoff_base_ms: 1000 }
    }
}

impl RetryPolicy {
    /// Sleep after failed attempt number `attempt` (1-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64 << (attempt.saturating_sub(1)).min(20);
        Duration::from_millis(self.backoff_base_ms.saturating_mul(factor))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendKind {
    Http {
        /// Full chat-completions URL.
        endpoint: String,
        /// Environment variable holding the bearer token.
        credential_env: String,
        /// Embeddings URL; derived from `endpoint` when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        embeddings_endpoint: Option<String>,
    },
    Mock {
        script: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendConfig {
    #[serde(flatten)]
    pub kind: BackendKind,
    #[serde(default)]
    pub retry: RetryPolicy,
}

impl BackendConfig {
    pub fn mock(script: impl Into<PathBuf>) -> Self {
        Self { kind: BackendKind::Mock { script: script.into() }, retry: RetryPolicy::default() }
    }

    pub fn http(endpoint: impl Into<String>, credential_env: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Http {
                endpoint: endpoint.into(),
                credential_env: credential_env.into(),
                embeddings_endpoint: None,
            },
            retry: RetryPolicy::default(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            BackendKind::Http { .. } => "http",
            BackendKind::Mock { .. } => "mock",
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        match &self.kind {
            BackendKind::Http { endpoint, credential_env, .. } => {
                if endpoint.trim().is_empty() {
                    return Err(LlmError::Config("http backend needs an endpoint".into()));
                }
                if credential_env.trim().is_empty() {
                    return Err(LlmError::Config(
                        "http backend needs a credential environment variable name".into(),
                    ));
                }
            }
            BackendKind::Mock { script } => {
                if script.as_os_str().is_empty() {
                    return Err(LlmError::Config("mock backend needs a script path".into()));
                }
            }
        }
        if self.retry.max_attempts == 0 {
            return Err(LlmError::Config("retry max_attempts must be at least 1".into()));
        }
        Ok(())
    }
}

/// Failure of a single backend attempt.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed backend reply: {0}")]
    Malformed(String),
}

impl BackendError {
    /// Transport failures, rate limits and server-side (5xx) statuses.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) | BackendError::RateLimited(_) => true,
            BackendError::Status { status, .. } => *status >= 500,
            BackendError::Auth(_) | BackendError::Malformed(_) => false,
        }
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("giving up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: BackendError },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("malformed backend reply: {0}")]
    Malformed(String),
    #[error(transparent)]
    Backend(BackendError),
    #[error("no cached response for key {key}")]
    CacheMiss { key: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid backend configuration: {0}")]
    Config(String),
    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    EmbeddingDimension { expected: usize, found: usize },
    #[error("mock script: {0}")]
    Script(String),
    #[error("cache I/O: {0}")]
    Io(#[from] std::io::Error),
}

impl LlmError {
    fn from_backend(e: BackendError, attempts: u32) -> Self {
        match e {
            BackendError::Auth(m) => LlmError::Auth(m),
            BackendError::Malformed(m) => LlmError::Malformed(m),
            e if e.is_retryable() => LlmError::Exhausted { attempts, last: e },
            e => LlmError::Backend(e),
        }
    }

    /// Failures that will recur on every further request (bad credentials).
    pub fn is_fatal(&self) -> bool {
        matches!(self, LlmError::Auth(_) | LlmError::Config(_) | LlmError::Script(_))
    }
}

/// Content hash identifying one backend request.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn for_completion(backend_kind: &str, request: &CompletionRequest) -> Self {
        let mut h = KeyHasher::new("completion");
        h.field(backend_kind.as_bytes());
        h.field(request.model.as_bytes());
        h.field(&(request.messages.len() as u64).to_le_bytes());
        for m in &request.messages {
            h.field(m.role.as_str().as_bytes());
            h.field(m.content.as_bytes());
        }
        h.field(&request.temperature.to_bits().to_le_bytes());
        h.field(&request.max_tokens.to_le_bytes());
        h.finish()
    }

    pub fn for_embedding(backend_kind: &str, model: &str, text: &str) -> Self {
        let mut h = KeyHasher::new("embedding");
        h.field(backend_kind.as_bytes());
        h.field(model.as_bytes());
        h.field(text.as_bytes());
        h.finish()
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<String> for CacheKey {
    fn from(s: String) -> Self {
        CacheKey(s)
    }
}

/// Length-prefixed fields so that no two field sequences share an encoding.
struct KeyHasher(Sha256);

impl KeyHasher {
    fn new(domain: &str) -> Self {
        let mut h = Self(Sha256::new());
        h.field(domain.as_bytes());
        h
    }

    fn field(&mut self, bytes: &[u8]) {
        self.0.update((bytes.len() as u64).to_le_bytes());
        self.0.update(bytes);
    }

    fn finish(self) -> CacheKey {
        CacheKey(hex::encode(self.0.finalize()))
    }
}

/// One chat/embedding provider. Implementations make exactly one attempt per
/// call; retries and caching live in [`LlmClient`].
pub trait Backend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError>;
    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError>;
}

/// Retrying, caching front end over a [`Backend`]. Safe to share across threads.
pub struct LlmClient {
    backend: Option<Arc<dyn Backend>>,
    kind: String,
    retry: RetryPolicy,
    cache: Option<Arc<ResponseCache>>,
    calls: AtomicUsize,
}

impl fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LlmClient")
            .field("kind", &self.kind)
            .field("retry", &self.retry)
            .field("cache_only", &self.backend.is_none())
            .field("calls", &self.backend_calls())
            .finish()
    }
}

impl LlmClient {
    pub fn new(kind: impl Into<String>, backend: Arc<dyn Backend>, retry: RetryPolicy) -> Self {
        Self { backend: Some(backend), kind: kind.into(), retry, cache: None, calls: AtomicUsize::new(0) }
    }

    /// A client that answers only from `cache`; any miss is an error.
    pub fn cache_only(kind: impl Into<String>, cache: Arc<ResponseCache>) -> Self {
        Self {
            backend: None,
            kind: kind.into(),
            retry: RetryPolicy::default(),
            cache: Some(cache),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn from_config(config: &BackendConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let backend: Arc<dyn Backend> = match &config.kind {
            BackendKind::Http { endpoint, credential_env, embeddings_endpoint } => {
                Arc::new(HttpBackend::from_env(endpoint, credential_env, embeddings_endpoint.as_deref())?)
            }
            BackendKind::Mock { script } => Arc::new(MockBackend::new(MockScript::load(script)?)),
        };
        Ok(Self::new(config.kind_name(), backend, config.retry))
    }

    pub fn with_cache(mut self, cache: Arc<ResponseCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn kind(&self) -> &str {
        &self.kind
    }

    pub fn cache(&self) -> Option<&Arc<ResponseCache>> {
        self.cache.as_ref()
    }

    /// Number of attempts that reached the backend (cache hits excluded).
    pub fn backend_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn with_retry<R>(
        &self,
        mut attempt: impl FnMut(&dyn Backend) -> Result<R, BackendError>,
        miss_key: &CacheKey,
    ) -> Result<R, LlmError> {
        let backend =
            self.backend.as_deref().ok_or_else(|| LlmError::CacheMiss { key: miss_key.to_string() })?;
        let mut n = 0;
        loop {
            n += 1;
            self.calls.fetch_add(1, Ordering::SeqCst);
            match attempt(backend) {
                Ok(r) => return Ok(r),
                Err(e) if e.is_retryable() && n < self.retry.max_attempts => {
                    log::debug!("attempt {n} failed ({e}); retrying");
                    std::thread::sleep(self.retry.backoff(n));
                }
                Err(e) => return Err(LlmError::from_backend(e, n)),
            }
        }
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        request.validate()?;
        let start = Instant::now();
        let key = CacheKey::for_completion(&self.kind, request);
        if let Some(CachedValue::Completion(content)) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            return Ok(CompletionResponse {
                content,
                model: request.model.clone(),
                latency: start.elapsed(),
                from_cache: true,
            });
        }
        let content = self.with_retry(|b| b.complete(request), &key)?;
        if let Some(cache) = &self.cache {
            cache.insert(key, CachedValue::Completion(content.clone()))?;
        }
        Ok(CompletionResponse {
            content,
            model: request.model.clone(),
            latency: start.elapsed(),
            from_cache: false,
        })
    }

    /// One vector per text, all of the same dimension.
    pub fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<EmbeddingVector<f64>>, LlmError> {
        if texts.is_empty() {
            return Err(LlmError::InvalidRequest("no texts to embed".into()));
        }
        let keys: Vec<CacheKey> =
            texts.iter().map(|t| CacheKey::for_embedding(&self.kind, model, t)).collect();
        let mut out: Vec<Option<Vec<f64>>> = keys
            .iter()
            .map(|k| match self.cache.as_ref().and_then(|c| c.get(k)) {
                Some(CachedValue::Embedding(v)) => Some(v),
                _ => None,
            })
            .collect();
        let missing: Vec<usize> = (0..texts.len()).filter(|&i| out[i].is_none()).collect();
        if !missing.is_empty() {
            let batch: Vec<String> = missing.iter().map(|&i| texts[i].clone()).collect();
            let vectors = self.with_retry(|b| b.embed(model, &batch), &keys[missing[0]])?;
            if vectors.len() != batch.len() {
                return Err(LlmError::Malformed(format!(
                    "{} embeddings returned for {} texts",
                    vectors.len(),
                    batch.len()
                )));
            }
            for (&i, v) in missing.iter().zip(vectors) {
                if let Some(cache) = &self.cache {
                    cache.insert(keys[i].clone(), CachedValue::Embedding(v.clone()))?;
                }
                out[i] = Some(v);
            }
        }
        let vectors: Vec<Vec<f64>> = out.into_iter().map(|v| v.expect("filled above")).collect();
        let dim = vectors[0].len();
        if let Some(bad) = vectors.iter().find(|v| v.len() != dim) {
            return Err(LlmError::EmbeddingDimension { expected: dim, found: bad.len() });
        }
        vectors
            .into_iter()
            .map(|v| EmbeddingVector::new(v).map_err(|e| LlmError::Malformed(e.to_string())))
            .collect()
    }
}
