use std::collections::HashMap;
use std::thread;
use std::time::{Duration, Instant};

use log::warn;
use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ChatBackend, ChatRequest, ChatResponse, GatewayError, StageTag, Usage};

/// Environment variable holding the bearer credential for live endpoints.
pub const API_KEY_ENV: &str = "BASE_SQL_API_KEY";

const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoint {
    /// Server root, e.g. `http://localhost:8000` (a trailing `/v1` is fine).
    pub base_url: String,
}

impl Endpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
        }
    }

    fn completions_url(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            return base.to_string();
        }
        let base = base.strip_suffix("/v1").unwrap_or(base);
        format!("{base}/v1/chat/completions")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_backoff_ms: 500,
        }
    }
}

/// Live backend speaking the OpenAI-compatible `/v1/chat/completions`
/// protocol, with a per-stage endpoint table.
pub struct OpenAiBackend {
    client: Client,
    default: Endpoint,
    per_stage: HashMap<StageTag, Endpoint>,
    api_key: Option<String>,
    retry: RetryPolicy,
}

impl OpenAiBackend {
    /// Reads the credential from [`API_KEY_ENV`].
    pub fn new(default: Endpoint) -> Result<Self, GatewayError> {
        Self::with_timeout(default, DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(default: Endpoint, timeout: Duration) -> Result<Self, GatewayError> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Backend(format!("building HTTP client: {e}")))?;
        Ok(Self {
            client,
            default,
            per_stage: HashMap::new(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            retry: RetryPolicy::default(),
        })
    }

    pub fn with_stage_endpoint(mut self, stage: StageTag, endpoint: Endpoint) -> Self {
        self.per_stage.insert(stage, endpoint);
        self
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn endpoint(&self, stage: StageTag) -> &Endpoint {
        self.per_stage.get(&stage).unwrap_or(&self.default)
    }

    fn send_once(&self, url: &str, body: &serde_json::Value) -> Result<ApiResponse, GatewayError> {
        let mut request = self.client.post(url).json(body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .map_err(|e| GatewayError::EndpointUnreachable(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| GatewayError::EndpointUnreachable(e.to_string()))?;
        if !status.is_success() {
            return Err(GatewayError::HttpStatus {
                code: status.as_u16(),
                body: text.chars().take(500).collect(),
            });
        }
        serde_json::from_str(&text).map_err(|e| GatewayError::MalformedResponse(e.to_string()))
    }
}

fn retryable(err: &GatewayError) -> bool {
    match err {
        GatewayError::EndpointUnreachable(_) => true,
        GatewayError::HttpStatus { code, .. } => *code == 429 || *code >= 500,
        _ => false,
    }
}

#[derive(Deserialize)]
struct ApiResponse {
    choices: Vec<ApiChoice>,
    usage: Option<ApiUsage>,
}

#[derive(Deserialize)]
struct ApiChoice {
    message: ApiMessage,
}

#[derive(Deserialize)]
struct ApiMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct ApiUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

impl ChatBackend for OpenAiBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let url = self.endpoint(req.stage_tag).completions_url();
        let body = json!({
            "model": req.model_name,
            "messages": req.messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
            "stream": false,
        });
        let started = Instant::now();
        let mut backoff = Duration::from_millis(self.retry.initial_backoff_ms);
        let mut attempt = 0;
        let parsed = loop {
            match self.send_once(&url, &body) {
                Ok(parsed) => break parsed,
                Err(e) if attempt < self.retry.max_retries && retryable(&e) => {
                    attempt += 1;
                    warn!("{url}: {e}; retry {attempt}/{}", self.retry.max_retries);
                    thread::sleep(backoff);
                    backoff *= 2;
                }
                Err(e) => return Err(e),
            }
        };
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .filter(|c| !c.is_empty())
            .ok_or_else(|| GatewayError::MalformedResponse("no choice content".into()))?;
        Ok(ChatResponse {
            content,
            usage: parsed.usage.map(|u| Usage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
            }),
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;

    /// Serve the canned `(status, body)` replies in order, one per
    /// connection, forwarding each raw request to the returned channel.
    fn serve(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut head = String::new();
                let mut content_length = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        content_length = v.trim().parse().unwrap();
                    }
                    head.push_str(&line);
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut payload = vec![0; content_length];
                reader.read_exact(&mut payload).unwrap();
                tx.send(format!("{head}{}", String::from_utf8_lossy(&payload)))
                    .unwrap();
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        (format!("http://{addr}"), rx)
    }

    fn ok_body(content: &str) -> String {
        json!({
            "choices": [{"message": {"role": "assistant", "content": content}}],
            "usage": {"prompt_tokens": 11, "completion_tokens": 3}
        })
        .to_string()
    }

    fn fast_retry() -> RetryPolicy {
        RetryPolicy {
            max_retries: 3,
            initial_backoff_ms: 1,
        }
    }

    #[test]
    fn sends_openai_wire_format() {
        let (url, rx) = serve(vec![(200, ok_body("SELECT 1"))]);
        let backend = OpenAiBackend::new(Endpoint::new(format!("{url}/v1/")))
            .unwrap()
            .with_api_key(Some("sk-test".into()));
        let req = ChatRequest::user_prompt("coder", "hello", StageTag::Generation);
        let resp = backend.complete(&req).unwrap();
        assert_eq!(resp.content, "SELECT 1");
        assert_eq!(
            resp.usage,
            Some(Usage {
                prompt_tokens: 11,
                completion_tokens: 3
            })
        );
        let raw = rx.recv().unwrap();
        assert!(raw.starts_with("POST /v1/chat/completions "));
        assert!(raw.to_ascii_lowercase().contains("authorization: bearer sk-test"));
        let body: serde_json::Value =
            serde_json::from_str(&raw[raw.find("\r\n\r\n").unwrap() + 4..]).unwrap();
        assert_eq!(body["model"], "coder");
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"], "hello");
        assert_eq!(body["temperature"], 0.0);
    }

    #[test]
    fn retries_server_errors_then_succeeds() {
        let (url, _rx) = serve(vec![
            (503, "{}".into()),
            (429, "{}".into()),
            (200, ok_body("SELECT 2")),
        ]);
        let backend = OpenAiBackend::new(Endpoint::new(url))
            .unwrap()
            .with_retry(fast_retry());
        let req = ChatRequest::user_prompt("m", "x", StageTag::Merge);
        assert_eq!(backend.complete(&req).unwrap().content, "SELECT 2");
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, _rx) = serve(vec![(400, "{\"error\":\"bad\"}".into())]);
        let backend = OpenAiBackend::new(Endpoint::new(url))
            .unwrap()
            .with_retry(fast_retry());
        let req = ChatRequest::user_prompt("m", "x", StageTag::Merge);
        assert!(matches!(
            backend.complete(&req),
            Err(GatewayError::HttpStatus { code: 400, .. })
        ));
    }

    #[test]
    fn unreachable_endpoint() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let backend = OpenAiBackend::new(Endpoint::new(format!("http://{addr}")))
            .unwrap()
            .with_retry(RetryPolicy {
                max_retries: 1,
                initial_backoff_ms: 1,
            });
        let req = ChatRequest::user_prompt("m", "x", StageTag::Linking);
        assert!(matches!(
            backend.complete(&req),
            Err(GatewayError::EndpointUnreachable(_))
        ));
    }

    #[test]
    fn stage_endpoints_override_default() {
        let (url, rx) = serve(vec![(200, ok_body("SELECT 3"))]);
        let backend = OpenAiBackend::new(Endpoint::new("http://127.0.0.1:9"))
            .unwrap()
            .with_stage_endpoint(StageTag::Revision, Endpoint::new(url));
        let req = ChatRequest::user_prompt("m", "x", StageTag::Revision);
        assert_eq!(backend.complete(&req).unwrap().content, "SELECT 3");
        assert!(rx.recv().unwrap().starts_with("POST /v1/chat/completions"));
    }
}
