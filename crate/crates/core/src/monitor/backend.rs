//! Completion backends: the request/response types and the dispatch trait.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_MAX_TOKENS: u32 = 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("temperature {0} must be a nonnegative finite number")]
    InvalidTemperature(f64),
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("response did not contain completion text: {0}")]
    Decode(String),
    #[error("no cached response for {template} prompt {prompt_sha256}")]
    CacheMiss { template: String, prompt_sha256: String },
    #[error("replay cache error: {0}")]
    Cache(String),
    #[error("backend configuration error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRequest {
    /// Name of the template the prompt was rendered from; part of the
    /// replay-cache key.
    pub template: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl BackendRequest {
    pub fn new(template: impl Into<String>, prompt: impl Into<String>) -> Result<Self, BackendError> {
        Self::with_params(template, prompt, 0.0, DEFAULT_MAX_TOKENS)
    }

    pub fn with_params(
        template: impl Into<String>,
        prompt: impl Into<String>,
        temperature: f64,
        max_tokens: u32,
    ) -> Result<Self, BackendError> {
        let prompt = prompt.into();
        if prompt.trim().is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        if !(temperature.is_finite() && temperature >= 0.0) {
            return Err(BackendError::InvalidTemperature(temperature));
        }
        Ok(Self { template: template.into(), prompt, temperature, max_tokens })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BackendResponse {
    pub text: String,
    pub latency: Duration,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

impl BackendResponse {
    pub fn text(text: impl Into<String>) -> Self {
        Self { text: text.into(), ..Default::default() }
    }
}

/// A completion service. Implementations must be safe to call from several
/// worker threads at once.
pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    fn query(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError>;
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn query(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        (**self).query(request)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn query(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        (**self).query(request)
    }
}

pub fn query(backend: &dyn Backend, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
    let started = std::time::Instant::now();
    let mut response = backend.query(request)?;
    if response.latency.is_zero() {
        response.latency = started.elapsed();
    }
    Ok(response)
}
