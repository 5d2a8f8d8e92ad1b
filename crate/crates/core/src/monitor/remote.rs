//! HTTP completion backend for an OpenAI-style completions endpoint.
//!
//! The endpoint and key come from `SEMSENTRY_API_URL` and
//! `SEMSENTRY_API_KEY`; the completion text is located in the response by a
//! JSON pointer. Timeouts, connection errors, 408, 429 and 5xx are retried
//! with exponential backoff.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::backend::{Backend, BackendError, BackendRequest, BackendResponse};

pub const URL_ENV: &str = "SEMSENTRY_API_URL";
pub const KEY_ENV: &str = "SEMSENTRY_API_KEY";
pub const MODEL_ENV: &str = "SEMSENTRY_MODEL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteConfig {
    pub url: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub model: Option<String>,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    /// Request body field carrying the prompt.
    pub prompt_field: String,
    /// JSON pointer to the completion text in the response body.
    pub response_pointer: String,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            url: String::new(),
            api_key: None,
            model: None,
            timeout_s: 60.0,
            max_retries: 3,
            backoff_ms: 500,
            prompt_field: "prompt".into(),
            response_pointer: "/choices/0/text".into(),
        }
    }
}

impl RemoteConfig {
    /// Fill url, key and model from the environment where unset.
    pub fn with_env(mut self) -> Self {
        if self.url.is_empty() {
            self.url = std::env::var(URL_ENV).unwrap_or_default();
        }
        if self.api_key.is_none() {
            self.api_key = std::env::var(KEY_ENV).ok().filter(|k| !k.is_empty());
        }
        if self.model.is_none() {
            self.model = std::env::var(MODEL_ENV).ok().filter(|m| !m.is_empty());
        }
        self
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
}

fn retryable_status(status: u16) -> bool {
    status == 408 || status == 429 || (500..600).contains(&status)
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        if config.url.is_empty() {
            return Err(BackendError::Config(format!("no endpoint configured; set {URL_ENV}")));
        }
        if !(config.timeout_s.is_finite() && config.timeout_s > 0.0) {
            return Err(BackendError::Config(format!("timeout_s = {} must be positive", config.timeout_s)));
        }
        if config.prompt_field.is_empty() {
            return Err(BackendError::Config("prompt_field is empty".into()));
        }
        if !config.response_pointer.is_empty() && !config.response_pointer.starts_with('/') {
            return Err(BackendError::Config(format!("response_pointer `{}` must start with '/'", config.response_pointer)));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_s))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self { config, client })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn body(&self, request: &BackendRequest) -> Value {
        let mut body = json!({
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        body[self.config.prompt_field.as_str()] = json!(request.prompt);
        if let Some(model) = &self.config.model {
            body["model"] = json!(model);
        }
        body
    }

    fn decode(&self, body: &str) -> Result<BackendResponse, BackendError> {
        let value: Value = serde_json::from_str(body).map_err(|e| BackendError::Decode(e.to_string()))?;
        let text = value
            .pointer(&self.config.response_pointer)
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::Decode(format!("no string at `{}`", self.config.response_pointer)))?;
        Ok(BackendResponse {
            text: text.to_string(),
            latency: Duration::ZERO,
            prompt_tokens: value.pointer("/usage/prompt_tokens").and_then(Value::as_u64),
            completion_tokens: value.pointer("/usage/completion_tokens").and_then(Value::as_u64),
        })
    }
}

enum Attempt {
    Done(Result<BackendResponse, BackendError>),
    Retry(BackendError),
}

impl Backend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn query(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let started = Instant::now();
        let body = self.body(request);
        let attempts = self.config.max_retries + 1;
        let mut last = BackendError::Transport { attempts: 0, message: "no attempt made".into() };
        for attempt in 1..=attempts {
            let mut call = self.client.post(&self.config.url).json(&body);
            if let Some(key) = &self.config.api_key {
                call = call.bearer_auth(key);
            }
            let outcome = match call.send() {
                Err(e) if e.is_timeout() => Attempt::Retry(BackendError::Timeout { attempts: attempt }),
                Err(e) => Attempt::Retry(BackendError::Transport { attempts: attempt, message: e.to_string() }),
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    match resp.text() {
                        Err(e) => Attempt::Retry(BackendError::Transport { attempts: attempt, message: e.to_string() }),
                        Ok(text) if resp_ok(status) => Attempt::Done(self.decode(&text)),
                        Ok(text) if retryable_status(status) => Attempt::Retry(BackendError::Http { status, body: text }),
                        Ok(text) => Attempt::Done(Err(BackendError::Http { status, body: text })),
                    }
                }
            };
            match outcome {
                Attempt::Done(result) => {
                    return result.map(|mut r| {
                        r.latency = started.elapsed();
                        r
                    })
                }
                Attempt::Retry(err) => {
                    tracing::warn!(attempt, error = %err, "completion request failed");
                    last = err;
                    if attempt < attempts {
                        std::thread::sleep(Duration::from_millis(self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16))));
                    }
                }
            }
        }
        Err(last)
    }
}

fn resp_ok(status: u16) -> bool {
    (200..300).contains(&status)
}
