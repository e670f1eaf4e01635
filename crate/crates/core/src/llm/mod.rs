//! Chat-completion gateway.
//!
//! [`Gateway`] wraps a [`ChatBackend`] (live HTTP, replay store, or an
//! in-process stub), counts calls per pipeline stage, optionally records
//! every exchange to a JSONL replay store, and bounds in-flight requests.

mod openai;
mod replay;
pub mod stub;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use openai::{Endpoint, OpenAiBackend, RetryPolicy, API_KEY_ENV};
pub use replay::{ReplayBackend, ReplayRecord, ReplayStore, ReplayWriter};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error("endpoint unreachable: {0}")]
    EndpointUnreachable(String),
    #[error("endpoint returned HTTP {code}: {body}")]
    HttpStatus { code: u16, body: String },
    #[error("malformed endpoint response: {0}")]
    MalformedResponse(String),
    #[error("no replay record for request {0}")]
    ReplayMiss(String),
    #[error("replay store I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Backend(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StageTag {
    Linking,
    Generation,
    Revision,
    Merge,
}

impl StageTag {
    pub const ALL: [StageTag; 4] = [
        StageTag::Linking,
        StageTag::Generation,
        StageTag::Revision,
        StageTag::Merge,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for StageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StageTag::Linking => "linking",
            StageTag::Generation => "generation",
            StageTag::Revision => "revision",
            StageTag::Merge => "merge",
        };
        f.write_str(s)
    }
}

impl FromStr for StageTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StageTag::ALL
            .into_iter()
            .find(|t| t.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_name: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub stage_tag: StageTag,
}

impl ChatRequest {
    pub fn user_prompt(
        model_name: impl Into<String>,
        prompt: impl Into<String>,
        stage_tag: StageTag,
    ) -> Self {
        Self {
            model_name: model_name.into(),
            messages: vec![ChatMessage::user(prompt)],
            temperature: 0.0,
            max_tokens: 1024,
            stage_tag,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !self
            .messages
            .iter()
            .any(|m| m.role == Role::User && !m.content.is_empty())
        {
            return Err(GatewayError::InvalidRequest(
                "at least one non-empty user message is required".into(),
            ));
        }
        if self.messages.iter().any(|m| m.content.is_empty()) {
            return Err(GatewayError::InvalidRequest("empty message content".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest("temperature must be >= 0".into()));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Replay key: hex SHA-256 over model, messages and temperature.
    /// `max_tokens` and the stage tag do not participate.
    pub fn key_hash(&self) -> String {
        #[derive(Serialize)]
        struct Keyed<'a> {
            model_name: &'a str,
            messages: &'a [ChatMessage],
            temperature: f64,
        }
        let canonical = serde_json::to_vec(&Keyed {
            model_name: &self.model_name,
            messages: &self.messages,
            temperature: self.temperature,
        })
        .expect("request serializes");
        hex::encode(Sha256::digest(canonical))
    }

    /// Concatenated user message contents.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .filter(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub usage: Option<Usage>,
    pub latency_ms: u64,
}

impl ChatResponse {
    pub fn text(content: impl Into<String>) -> Self {
        Self {
            content: content.into(),
            usage: None,
            latency_ms: 0,
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).complete(req)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<B> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).complete(req)
    }
}

struct Limiter {
    max: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    fn acquire(&self) -> LimiterGuard<'_> {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.max {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

pub struct Gateway {
    backend: Box<dyn ChatBackend>,
    counts: [AtomicU64; 4],
    recorder: Option<ReplayWriter>,
    limiter: Option<Limiter>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("calls", &self.call_count(None))
            .field("recording", &self.recorder.is_some())
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: impl ChatBackend + 'static) -> Self {
        Self {
            backend: Box::new(backend),
            counts: Default::default(),
            recorder: None,
            limiter: None,
        }
    }

    /// Append every successful exchange to `writer`.
    pub fn with_recorder(mut self, writer: ReplayWriter) -> Self {
        self.recorder = Some(writer);
        self
    }

    /// Bound the number of concurrent in-flight requests.
    pub fn with_parallelism(mut self, max_in_flight: usize) -> Self {
        self.limiter = Some(Limiter {
            max: max_in_flight.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        });
        self
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        self.counts[req.stage_tag.index()].fetch_add(1, Ordering::SeqCst);
        let _slot = self.limiter.as_ref().map(Limiter::acquire);
        let started = Instant::now();
        let mut response = self.backend.complete(req)?;
        if response.latency_ms == 0 {
            response.latency_ms = started.elapsed().as_millis() as u64;
        }
        if let Some(recorder) = &self.recorder {
            recorder.append(&ReplayRecord::new(req, &response))?;
        }
        Ok(response)
    }

    /// Number of `complete` invocations, optionally for one stage only.
    pub fn call_count(&self, stage: Option<StageTag>) -> u64 {
        match stage {
            Some(s) => self.counts[s.index()].load(Ordering::SeqCst),
            None => self.counts.iter().map(|c| c.load(Ordering::SeqCst)).sum(),
        }
    }
}
