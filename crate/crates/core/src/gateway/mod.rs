//! Chat-completion client with a content-addressed response cache.
//!
//! Every request is hashed into a cache key. A cache hit never reaches the backend;
//! a miss goes through the rate limiter and the retry loop, and the verbatim text is
//! persisted so that later runs can replay offline. Concurrent identical requests are
//! coalesced on a per-key lock, so at most one upstream call is made per key.

mod cache;
mod http;
mod limiter;
mod stub;

use std::sync::Arc;
use std::time::{Duration, Instant};

use dashmap::DashMap;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{CacheEntry, ResponseCache};
pub use http::{parse_completion_body, HttpBackend, BASE_URL_ENV, API_KEY_ENV};
pub use limiter::RateLimiter;
pub use stub::ScriptedBackend;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("offline replay gap: no cached response for key {key}")]
    ReplayGap { key: String },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("request rejected: {0}")]
    Fatal(String),
    #[error("no LLM backend configured (set {BASE_URL_ENV} or run with --offline)")]
    NoBackend,
    #[error("response cache: {0}")]
    Cache(String),
}

/// Failure reported by a backend for a single attempt.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendError {
    /// HTTP 429 or equivalent; optionally carries the server's `Retry-After`.
    RateLimited { retry_after: Option<Duration> },
    Auth(String),
    /// Worth retrying: timeouts, connection errors, 5xx.
    Transient(String),
    /// Not worth retrying.
    Fatal(String),
}

impl std::fmt::Display for BackendError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BackendError::RateLimited { .. } => f.write_str("rate limited"),
            BackendError::Auth(m) => write!(f, "auth: {m}"),
            BackendError::Transient(m) => write!(f, "transient: {m}"),
            BackendError::Fatal(m) => write!(f, "fatal: {m}"),
        }
    }
}

/// One attempt at a chat completion. Implementations must not retry internally.
pub trait ChatBackend: Send + Sync {
    fn send(&self, request: &LlmRequest) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
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
}

/// Decoding parameters shared by every call of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub seed_tag: String,
}

impl GenerationParams {
    pub fn new(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            temperature: 0.0,
            max_tokens: 150,
            seed_tag: String::new(),
        }
    }

    pub fn request(&self, prompt: impl Into<String>) -> LlmRequest {
        LlmRequest {
            model: self.model.clone(),
            messages: vec![ChatMessage::user(prompt)],
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            seed_tag: self.seed_tag.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed_tag: String,
}

impl LlmRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !self.messages.iter().any(|m| m.role == Role::User) {
            return Err(GatewayError::InvalidRequest("no user message".into()));
        }
        if self.messages.iter().any(|m| m.content.is_empty()) {
            return Err(GatewayError::InvalidRequest("empty message content".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 over the canonical JSON of every field.
    pub fn cache_key(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    /// Content of the last user message.
    pub fn prompt(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    /// Verbatim completion text.
    pub text: String,
    pub cached: bool,
    pub latency_ms: u64,
    pub model: String,
}

/// Exponential backoff: `base · factor^(attempt−1)` between attempts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub base: Duration,
    pub factor: u32,
    pub max_attempts: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            base: Duration::from_secs(1),
            factor: 2,
            max_attempts: 5,
        }
    }
}

impl RetryPolicy {
    /// Delay to wait after failed attempt number `attempt` (1-based).
    pub fn delay_after(&self, attempt: u32) -> Duration {
        self.base * self.factor.saturating_pow(attempt.saturating_sub(1))
    }
}

pub type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

fn thread_sleeper() -> Sleeper {
    Arc::new(std::thread::sleep)
}

pub struct LlmGateway {
    backend: Option<Arc<dyn ChatBackend>>,
    cache: ResponseCache,
    offline: bool,
    retry: RetryPolicy,
    limiter: RateLimiter,
    sleeper: Sleeper,
    inflight: DashMap<String, Arc<Mutex<()>>>,
}

impl LlmGateway {
    pub fn new(backend: Option<Arc<dyn ChatBackend>>, cache: ResponseCache) -> Self {
        Self {
            backend,
            cache,
            offline: false,
            retry: RetryPolicy::default(),
            limiter: RateLimiter::unlimited(),
            sleeper: thread_sleeper(),
            inflight: DashMap::new(),
        }
    }

    /// A gateway that only ever answers from `cache`.
    pub fn offline(cache: ResponseCache) -> Self {
        Self::new(None, cache).with_offline(true)
    }

    pub fn with_offline(mut self, offline: bool) -> Self {
        self.offline = offline;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_rate_limit(mut self, requests_per_minute: Option<u32>) -> Self {
        self.limiter = match requests_per_minute {
            Some(rpm) if rpm > 0 => RateLimiter::per_minute(rpm),
            _ => RateLimiter::unlimited(),
        };
        self
    }

    pub fn with_sleeper(mut self, sleeper: Sleeper) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn is_offline(&self) -> bool {
        self.offline
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    pub fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, GatewayError> {
        request.validate()?;
        let key = request.cache_key();
        let started = Instant::now();
        if let Some(text) = self.cache.get(&key)? {
            return Ok(self.hit(request, text, started));
        }

        let slot = self
            .inflight
            .entry(key.clone())
            .or_insert_with(|| Arc::new(Mutex::new(())))
            .clone();
        let _guard = slot.lock();
        // another worker may have filled the cache while we waited
        if let Some(text) = self.cache.get(&key)? {
            return Ok(self.hit(request, text, started));
        }
        if self.offline {
            return Err(GatewayError::ReplayGap { key });
        }
        let backend = self.backend.as_ref().ok_or(GatewayError::NoBackend)?;
        let text = self.send_with_retries(backend.as_ref(), request)?;
        self.cache.put(&key, request, &text)?;
        Ok(LlmResponse {
            text,
            cached: false,
            latency_ms: started.elapsed().as_millis() as u64,
            model: request.model.clone(),
        })
    }

    fn hit(&self, request: &LlmRequest, text: String, started: Instant) -> LlmResponse {
        LlmResponse {
            text,
            cached: true,
            latency_ms: started.elapsed().as_millis() as u64,
            model: request.model.clone(),
        }
    }

    fn send_with_retries(
        &self,
        backend: &dyn ChatBackend,
        request: &LlmRequest,
    ) -> Result<String, GatewayError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.limiter.acquire(&*self.sleeper);
            let err = match backend.send(request) {
                Ok(text) => return Ok(text),
                Err(e) => e,
            };
            log::warn!("LLM attempt {attempt} for model {} failed: {err}", request.model);
            let wait = match &err {
                BackendError::Auth(m) => return Err(GatewayError::Auth(m.clone())),
                BackendError::Fatal(m) => return Err(GatewayError::Fatal(m.clone())),
                BackendError::RateLimited { retry_after } => {
                    let backoff = self.retry.delay_after(attempt);
                    retry_after.map_or(backoff, |ra| ra.max(backoff))
                }
                BackendError::Transient(_) => self.retry.delay_after(attempt),
            };
            if attempt >= self.retry.max_attempts {
                return Err(GatewayError::RetriesExhausted {
                    attempts: attempt,
                    last: err.to_string(),
                });
            }
            (self.sleeper)(wait);
        }
    }
}
