use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::header::RETRY_AFTER;
use reqwest::StatusCode;
use serde::Serialize;
use serde_json::Value;

use super::{BackendError, ChatBackend, ChatMessage, LlmRequest};

pub const BASE_URL_ENV: &str = "VWSD_LLM_BASE_URL";
pub const API_KEY_ENV: &str = "VWSD_LLM_API_KEY";

/// OpenAI-compatible `POST /v1/chat/completions` backend.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    client: Client,
    endpoint: String,
    api_key: Option<String>,
}

#[derive(Serialize)]
struct ChatBody<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

impl HttpBackend {
    /// `base_url` may be the server root (`http://host:8000`) or already end in `/v1`.
    pub fn new(base_url: &str, api_key: Option<String>) -> Result<Self, reqwest::Error> {
        let client = Client::builder().timeout(Duration::from_secs(120)).build()?;
        Ok(Self {
            client,
            endpoint: chat_endpoint(base_url),
            api_key: api_key.filter(|k| !k.is_empty()),
        })
    }

    /// Reads `VWSD_LLM_BASE_URL` / `VWSD_LLM_API_KEY`. Returns `None` if no base URL is set.
    pub fn from_env() -> Option<Result<Self, reqwest::Error>> {
        let base = std::env::var(BASE_URL_ENV).ok().filter(|s| !s.is_empty())?;
        Some(Self::new(&base, std::env::var(API_KEY_ENV).ok()))
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

fn chat_endpoint(base_url: &str) -> String {
    let base = base_url.trim_end_matches('/');
    if base.ends_with("/chat/completions") {
        base.to_string()
    } else if base.ends_with("/v1") {
        format!("{base}/chat/completions")
    } else {
        format!("{base}/v1/chat/completions")
    }
}

/// Extracts the completion text from either the chat shape
/// (`choices[0].message.content`) or the legacy completions shape (`choices[0].text`).
pub fn parse_completion_body(body: &Value) -> Result<String, BackendError> {
    let choice = body
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| BackendError::Fatal(format!("response has no choices: {body}")))?;
    if let Some(content) = choice
        .get("message")
        .and_then(|m| m.get("content"))
        .and_then(Value::as_str)
    {
        return Ok(content.to_string());
    }
    if let Some(text) = choice.get("text").and_then(Value::as_str) {
        return Ok(text.to_string());
    }
    Err(BackendError::Fatal(format!("choice has no text: {choice}")))
}

impl ChatBackend for HttpBackend {
    fn send(&self, request: &LlmRequest) -> Result<String, BackendError> {
        let body = ChatBody {
            model: &request.model,
            messages: &request.messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let mut call = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let resp = call.send().map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = resp.status();
        if status == StatusCode::TOO_MANY_REQUESTS {
            let retry_after = resp
                .headers()
                .get(RETRY_AFTER)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<u64>().ok())
                .map(Duration::from_secs);
            return Err(BackendError::RateLimited { retry_after });
        }
        let text = resp.text().map_err(|e| BackendError::Transient(e.to_string()))?;
        if status == StatusCode::UNAUTHORIZED || status == StatusCode::FORBIDDEN {
            return Err(BackendError::Auth(format!("{status}: {text}")));
        }
        if status.is_server_error() {
            return Err(BackendError::Transient(format!("{status}: {text}")));
        }
        if !status.is_success() {
            return Err(BackendError::Fatal(format!("{status}: {text}")));
        }
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| BackendError::Fatal(format!("invalid JSON body: {e}")))?;
        parse_completion_body(&value)
    }
}
