//! Stateless text-generation client.
//!
//! Every request is self-contained: nothing from earlier requests is carried
//! into later ones. Two backends are provided, a remote HTTP backend for real
//! campaigns and a scripted backend ([`ScriptedFixture`]) that answers from a
//! rule file so the whole pipeline can run offline and deterministically.

mod accounting;
mod fixture;
mod remote;

pub use accounting::{Accounting, StageUsage, UsageEvent, UsageSummary};
pub use fixture::{FixtureRule, Matcher, ScriptedFixture};
pub use remote::{RemoteBackend, RemoteConfig};

use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;

/// Default sampling temperature for extraction-style tasks.
pub const EXTRACTION_TEMPERATURE: f32 = 0.2;
/// Default sampling temperature for generation-style tasks.
pub const GENERATION_TEMPERATURE: f32 = 0.7;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("no fixture rule matches prompt: {0:?}")]
    FixtureMiss(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("fixture file error: {0}")]
    Fixture(String),
    #[error("provider not configured: {0}")]
    NotConfigured(String),
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, LlmError::Transport(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmRequest {
    pub prompt_text: String,
    pub max_response_chars: usize,
    pub temperature_hint: f32,
    /// Pipeline stage the request is accounted under ("SA", "RAG", "Opt", "Mutator", ...).
    pub stage: String,
}

impl LlmRequest {
    pub fn new(prompt_text: impl Into<String>) -> Self {
        Self {
            prompt_text: prompt_text.into(),
            max_response_chars: 32 * 1024,
            temperature_hint: EXTRACTION_TEMPERATURE,
            stage: "default".to_string(),
        }
    }

    pub fn with_stage(mut self, stage: impl Into<String>) -> Self {
        self.stage = stage.into();
        self
    }

    pub fn with_temperature(mut self, t: f32) -> Self {
        self.temperature_hint = t;
        self
    }

    pub fn with_max_chars(mut self, n: usize) -> Self {
        self.max_response_chars = n;
        self
    }

    fn validate(&self) -> Result<(), LlmError> {
        if self.prompt_text.is_empty() {
            return Err(LlmError::InvalidRequest("empty prompt".into()));
        }
        if self.max_response_chars == 0 {
            return Err(LlmError::InvalidRequest(
                "max_response_chars must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.temperature_hint) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature_hint {} outside [0,1]",
                self.temperature_hint
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmResponse {
    pub text: String,
    pub provider_label: String,
    pub latency: Duration,
    pub token_estimate: u64,
    /// Set when the provider text was longer than `max_response_chars` and was cut.
    pub truncated: bool,
}

/// Raw provider output before accounting.
#[derive(Debug, Clone)]
pub struct BackendReply {
    pub text: String,
    pub tokens: Option<u64>,
}

pub trait LlmBackend: Send + Sync {
    fn label(&self) -> String;
    fn generate(&self, request: &LlmRequest) -> Result<BackendReply, LlmError>;
}

/// Character-count / 4, used only for reporting.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

/// Client wrapper adding validation, truncation and per-stage accounting.
#[derive(Clone)]
pub struct LlmClient {
    backend: Arc<dyn LlmBackend>,
    accounting: Arc<Accounting>,
}

impl LlmClient {
    pub fn new(backend: Arc<dyn LlmBackend>) -> Self {
        Self {
            backend,
            accounting: Arc::new(Accounting::default()),
        }
    }

    pub fn scripted(fixture: ScriptedFixture) -> Self {
        Self::new(Arc::new(fixture))
    }

    pub fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        request.validate()?;
        let started = Instant::now();
        let reply = self.backend.generate(request)?;
        let latency = started.elapsed();
        let mut text = reply.text;
        let mut truncated = false;
        if text.chars().count() > request.max_response_chars {
            log::warn!(
                "response truncated to {} chars (stage {})",
                request.max_response_chars,
                request.stage
            );
            text = text.chars().take(request.max_response_chars).collect();
            truncated = true;
        }
        let token_estimate = reply
            .tokens
            .unwrap_or_else(|| estimate_tokens(&request.prompt_text) + estimate_tokens(&text));
        self.accounting
            .record(&request.stage, latency, token_estimate);
        Ok(LlmResponse {
            text,
            provider_label: self.backend.label(),
            latency,
            token_estimate,
            truncated,
        })
    }

    pub fn accounting(&self) -> UsageSummary {
        self.accounting.summary()
    }

    pub fn usage_log(&self) -> Vec<UsageEvent> {
        self.accounting.events()
    }

    pub fn request_count(&self) -> u64 {
        self.accounting.summary().total_requests
    }
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient")
            .field("backend", &self.backend.label())
            .finish()
    }
}
