//! OpenAI-compatible chat-completions and embeddings over HTTPS.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{Backend, BackendError, CompletionRequest, LlmError};

const TIMEOUT: Duration = Duration::from_secs(120);

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    embeddings_endpoint: String,
    token: String,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.endpoint)
            .field("embeddings_endpoint", &self.embeddings_endpoint)
            .finish_non_exhaustive()
    }
}

#[derive(Deserialize)]
struct ChatReply {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct EmbeddingReply {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

/// `.../chat/completions` → `.../embeddings`.
fn derive_embeddings_endpoint(endpoint: &str) -> String {
    match endpoint.rfind("chat/completions") {
        Some(i) => format!("{}embeddings{}", &endpoint[..i], &endpoint[i + "chat/completions".len()..]),
        None => format!("{}/embeddings", endpoint.trim_end_matches('/')),
    }
}

impl HttpBackend {
    pub fn new(
        endpoint: impl Into<String>,
        token: impl Into<String>,
        embeddings_endpoint: Option<&str>,
    ) -> Result<Self, LlmError> {
        let endpoint = endpoint.into();
        let client = reqwest::blocking::Client::builder()
            .timeout(TIMEOUT)
            .build()
            .map_err(|e| LlmError::Config(format!("http client: {e}")))?;
        Ok(Self {
            embeddings_endpoint: embeddings_endpoint
                .map(str::to_string)
                .unwrap_or_else(|| derive_embeddings_endpoint(&endpoint)),
            endpoint,
            client,
            token: token.into(),
        })
    }

    /// Reads the bearer token from the environment variable `credential_env`.
    pub fn from_env(
        endpoint: &str,
        credential_env: &str,
        embeddings_endpoint: Option<&str>,
    ) -> Result<Self, LlmError> {
        let token = std::env::var(credential_env)
            .ok()
            .filter(|t| !t.trim().is_empty())
            .ok_or_else(|| LlmError::Config(format!("environment variable {credential_env} is not set")))?;
        Self::new(endpoint, token, embeddings_endpoint)
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn embeddings_endpoint(&self) -> &str {
        &self.embeddings_endpoint
    }

    fn post(&self, url: &str, body: &serde_json::Value) -> Result<String, BackendError> {
        let resp = self
            .client
            .post(url)
            .bearer_auth(&self.token)
            .json(body)
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        match status {
            200..=299 => Ok(text),
            401 | 403 => Err(BackendError::Auth(format!("status {status}"))),
            429 => Err(BackendError::RateLimited(text)),
            _ => Err(BackendError::Status { status, body: text }),
        }
    }
}

impl Backend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let body = json!({
            "model": request.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let text = self.post(&self.endpoint, &body)?;
        let reply: ChatReply =
            serde_json::from_str(&text).map_err(|e| BackendError::Malformed(e.to_string()))?;
        reply
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::Malformed("reply has no message content".into()))
    }

    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        let body = json!({ "model": model, "input": texts });
        let text = self.post(&self.embeddings_endpoint, &body)?;
        let reply: EmbeddingReply =
            serde_json::from_str(&text).map_err(|e| BackendError::Malformed(e.to_string()))?;
        let mut data = reply.data;
        if data.iter().all(|d| d.index.is_some()) {
            data.sort_by_key(|d| d.index);
        }
        Ok(data.into_iter().map(|d| d.embedding).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ChatMessage;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves one canned response per connection and returns the request bodies.
    fn serve(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                let mut request_line = String::new();
                reader.read_line(&mut request_line).unwrap();
                let mut auth = String::new();
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if lower.starts_with("authorization:") {
                        auth = line.trim().to_string();
                    }
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(format!("{} {}|{}", request_line.trim(), auth, String::from_utf8(buf).unwrap()));
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            bodies
        });
        (url, handle)
    }

    fn request() -> CompletionRequest {
        CompletionRequest::new("gpt-4", vec![ChatMessage::system("Instruction: x"), ChatMessage::user("q")])
    }

    #[test]
    fn completion_round_trip() {
        let (url, h) = serve(vec![(
            200,
            r#"{"choices":[{"message":{"role":"assistant","content":"Yes, it matches."}}]}"#.into(),
        )]);
        let b = HttpBackend::new(&url, "secret", None).unwrap();
        assert_eq!(b.complete(&request()).unwrap(), "Yes, it matches.");
        let seen = h.join().unwrap();
        assert!(seen[0].starts_with("POST /v1/chat/completions"));
        assert!(seen[0].contains("Bearer secret"));
        let body: serde_json::Value = serde_json::from_str(seen[0].split_once('|').unwrap().1).unwrap();
        assert_eq!(body["model"], "gpt-4");
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["max_tokens"], 512);
    }

    #[test]
    fn status_mapping() {
        let (url, h) = serve(vec![
            (401, "{}".into()),
            (429, "slow down".into()),
            (500, "oops".into()),
            (404, "missing".into()),
            (200, "not json".into()),
        ]);
        let b = HttpBackend::new(&url, "k", None).unwrap();
        assert!(matches!(b.complete(&request()), Err(BackendError::Auth(_))));
        assert!(matches!(b.complete(&request()), Err(BackendError::RateLimited(_))));
        let server = b.complete(&request()).unwrap_err();
        assert!(matches!(server, BackendError::Status { status: 500, .. }) && server.is_retryable());
        let missing = b.complete(&request()).unwrap_err();
        assert!(matches!(missing, BackendError::Status { status: 404, .. }) && !missing.is_retryable());
        assert!(matches!(b.complete(&request()), Err(BackendError::Malformed(_))));
        h.join().unwrap();
    }

    #[test]
    fn unreachable_is_transport() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let b = HttpBackend::new(format!("http://{addr}/v1/chat/completions"), "k", None).unwrap();
        assert!(b.complete(&request()).unwrap_err().is_retryable());
    }

    #[test]
    fn embeddings_use_derived_endpoint() {
        let (url, h) = serve(vec![(
            200,
            r#"{"data":[{"index":1,"embedding":[0.0,1.0]},{"index":0,"embedding":[1.0,0.0]}]}"#.into(),
        )]);
        let b = HttpBackend::new(&url, "k", None).unwrap();
        assert!(b.embeddings_endpoint().ends_with("/v1/embeddings"));
        let v = b.embed("e", &["a".into(), "b".into()]).unwrap();
        assert_eq!(v, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(h.join().unwrap()[0].starts_with("POST /v1/embeddings"));
    }

    #[test]
    fn missing_credential_is_config_error() {
        let err =
            HttpBackend::from_env("http://x/chat/completions", "KCTAG_TEST_UNSET_VAR_41", None).unwrap_err();
        assert!(err.is_fatal());
    }

    #[test]
    fn endpoint_derivation() {
        assert_eq!(derive_embeddings_endpoint("https://h/v1/chat/completions"), "https://h/v1/embeddings");
        assert_eq!(derive_embeddings_endpoint("https://h/api/"), "https://h/api/embeddings");
    }
}
