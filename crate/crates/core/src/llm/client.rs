//! Blocking JSON chat-completion client.

use std::thread;
use std::time::Duration;

use log::{debug, warn};
use reqwest::blocking::Client;
use reqwest::{StatusCode, Url};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{ApemoError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelEndpoint {
    pub base_url: String,
    pub model_id: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    /// First retry delay; doubles on each further attempt.
    pub backoff_ms: u64,
}

impl Default for ModelEndpoint {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:11434".into(),
            model_id: "llama3.2:1b".into(),
            timeout_ms: 120_000,
            max_retries: 2,
            backoff_ms: 250,
        }
    }
}

impl ModelEndpoint {
    pub fn validate(&self) -> Result<()> {
        self.url("")?;
        if self.model_id.trim().is_empty() {
            return Err(ApemoError::config("llm.model_id must be non-empty"));
        }
        if self.timeout_ms == 0 {
            return Err(ApemoError::config("llm.timeout_ms must be > 0"));
        }
        Ok(())
    }

    fn url(&self, path: &str) -> Result<Url> {
        let base = Url::parse(&self.base_url)
            .map_err(|e| ApemoError::config(format!("invalid base_url {:?}: {e}", self.base_url)))?;
        if !matches!(base.scheme(), "http" | "https") {
            return Err(ApemoError::config(format!(
                "base_url must be http(s), got {:?}",
                self.base_url
            )));
        }
        base.join(path)
            .map_err(|e| ApemoError::config(format!("invalid endpoint path {path:?}: {e}")))
    }
}

/// Field names of the server's request and response bodies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Dialect {
    pub chat_path: String,
    pub tags_path: String,
    pub options_field: String,
    pub max_tokens_field: String,
    pub content_pointer: String,
    pub prompt_tokens_pointer: String,
    pub completion_tokens_pointer: String,
}

impl Default for Dialect {
    fn default() -> Self {
        Self {
            chat_path: "/api/chat".into(),
            tags_path: "/api/tags".into(),
            options_field: "options".into(),
            max_tokens_field: "num_predict".into(),
            content_pointer: "/message/content".into(),
            prompt_tokens_pointer: "/prompt_eval_count".into(),
            completion_tokens_pointer: "/eval_count".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Decoding {
    pub temperature: f64,
    pub top_p: f64,
    /// Optional ceiling applied on top of the scheduler's cap.
    pub max_tokens: Option<u64>,
}

impl Default for Decoding {
    fn default() -> Self {
        Self {
            temperature: 0.2,
            top_p: 0.9,
            max_tokens: None,
        }
    }
}

impl Decoding {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(ApemoError::config("decoding.temperature must be >= 0"));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(ApemoError::config("decoding.top_p must be in (0,1]"));
        }
        if self.max_tokens == Some(0) {
            return Err(ApemoError::config("decoding.max_tokens must be >= 1"));
        }
        Ok(())
    }

    pub fn effective_cap(&self, token_cap: u64) -> u64 {
        self.max_tokens.map_or(token_cap, |m| m.min(token_cap))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone)]
pub struct ChatClient {
    endpoint: ModelEndpoint,
    dialect: Dialect,
    http: Client,
}

enum Failure {
    Retryable(String),
    Fatal(ApemoError),
}

impl ChatClient {
    pub fn new(endpoint: ModelEndpoint, dialect: Dialect) -> Result<Self> {
        endpoint.validate()?;
        let http = Client::builder()
            .timeout(Duration::from_millis(endpoint.timeout_ms))
            .build()
            .map_err(|e| ApemoError::config(format!("http client: {e}")))?;
        Ok(Self {
            endpoint,
            dialect,
            http,
        })
    }

    pub fn endpoint(&self) -> &ModelEndpoint {
        &self.endpoint
    }

    pub fn dialect(&self) -> &Dialect {
        &self.dialect
    }

    /// The exact JSON body sent for one completion.
    pub fn build_request(
        &self,
        messages: &[ChatMessage],
        decoding: &Decoding,
        token_cap: u64,
        seed: u64,
    ) -> Value {
        let mut options = serde_json::Map::new();
        options.insert("temperature".into(), json!(decoding.temperature));
        options.insert("top_p".into(), json!(decoding.top_p));
        options.insert(
            self.dialect.max_tokens_field.clone(),
            json!(decoding.effective_cap(token_cap)),
        );
        options.insert("seed".into(), json!(seed));
        let mut body = serde_json::Map::new();
        body.insert("model".into(), json!(self.endpoint.model_id));
        body.insert("messages".into(), json!(messages));
        body.insert("stream".into(), json!(false));
        body.insert(self.dialect.options_field.clone(), Value::Object(options));
        Value::Object(body)
    }

    pub fn parse_response(&self, body: &Value) -> Result<Completion> {
        let text = body
            .pointer(&self.dialect.content_pointer)
            .and_then(Value::as_str)
            .ok_or_else(|| {
                ApemoError::Protocol(format!("missing {} in response", self.dialect.content_pointer))
            })?
            .to_string();
        let count = |ptr: &str| {
            body.pointer(ptr).and_then(Value::as_u64).ok_or_else(|| {
                ApemoError::Protocol(format!("missing or non-integer {ptr} in response"))
            })
        };
        Ok(Completion {
            text,
            prompt_tokens: count(&self.dialect.prompt_tokens_pointer)?,
            completion_tokens: count(&self.dialect.completion_tokens_pointer)?,
        })
    }

    pub fn chat_complete(
        &self,
        messages: &[ChatMessage],
        decoding: &Decoding,
        token_cap: u64,
        seed: u64,
    ) -> Result<Completion> {
        if token_cap == 0 {
            return Err(ApemoError::invalid("token_cap must be >= 1"));
        }
        let url = self.endpoint.url(&self.dialect.chat_path)?;
        let body = self.build_request(messages, decoding, token_cap, seed);
        let parsed = self.with_retries(&url, |http| {
            let resp = http
                .post(url.clone())
                .json(&body)
                .send()
                .map_err(|e| Failure::Retryable(e.to_string()))?;
            let status = resp.status();
            let text = resp.text().map_err(|e| Failure::Retryable(e.to_string()))?;
            check_status(status, &text)?;
            serde_json::from_str::<Value>(&text)
                .map_err(|e| Failure::Fatal(ApemoError::Protocol(format!("malformed body: {e}"))))
        })?;
        self.parse_response(&parsed)
    }

    /// Cheap reachability check against the model-listing route.
    pub fn preflight(&self) -> Result<()> {
        let url = self.endpoint.url(&self.dialect.tags_path)?;
        self.with_retries(&url, |http| {
            let resp = http
                .get(url.clone())
                .send()
                .map_err(|e| Failure::Retryable(e.to_string()))?;
            let status = resp.status();
            let text = resp.text().unwrap_or_default();
            check_status(status, &text)
        })
    }

    fn with_retries<T>(
        &self,
        url: &Url,
        mut call: impl FnMut(&Client) -> std::result::Result<T, Failure>,
    ) -> Result<T> {
        let mut delay = Duration::from_millis(self.endpoint.backoff_ms);
        let mut attempt = 0;
        loop {
            match call(&self.http) {
                Ok(v) => return Ok(v),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(msg)) if attempt < self.endpoint.max_retries => {
                    attempt += 1;
                    debug!("{url}: {msg}; retry {attempt} in {delay:?}");
                    thread::sleep(delay);
                    delay *= 2;
                }
                Err(Failure::Retryable(msg)) => {
                    warn!("{url}: giving up after {} attempts: {msg}", attempt + 1);
                    return Err(ApemoError::Transport {
                        endpoint: url.to_string(),
                        message: msg,
                    });
                }
            }
        }
    }
}

fn check_status(status: StatusCode, body: &str) -> std::result::Result<(), Failure> {
    if status.is_success() {
        Ok(())
    } else if status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS {
        Err(Failure::Retryable(format!("HTTP {status}")))
    } else {
        let snippet: String = body.chars().take(200).collect();
        Err(Failure::Fatal(ApemoError::Protocol(format!(
            "HTTP {status}: {snippet}"
        ))))
    }
}
