use std::time::Duration;

use serde_json::{json, Value};

use super::{BackendReply, LlmBackend, LlmError, LlmRequest};

pub const ENV_ENDPOINT: &str = "RF_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "RF_LLM_API_KEY";
pub const ENV_MODEL: &str = "RF_LLM_MODEL";

const ATTEMPTS: u32 = 3;
const INITIAL_BACKOFF: Duration = Duration::from_secs(2);

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Chat-completions style endpoint URL.
    pub endpoint: String,
    pub api_key: String,
    pub model: String,
    pub timeout: Duration,
}

impl RemoteConfig {
    pub fn from_env() -> Result<Self, LlmError> {
        let get = |k: &str| {
            std::env::var(k).map_err(|_| LlmError::NotConfigured(format!("{k} is not set")))
        };
        Ok(Self {
            endpoint: get(ENV_ENDPOINT)?,
            api_key: get(ENV_API_KEY)?,
            model: get(ENV_MODEL)?,
            timeout: Duration::from_secs(300),
        })
    }
}

/// OpenAI-compatible chat-completions backend. Each request is sent as a
/// single user message with no history.
pub struct RemoteBackend {
    config: RemoteConfig,
    http: reqwest::blocking::Client,
    backoff: Duration,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, LlmError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(Self {
            config,
            http,
            backoff: INITIAL_BACKOFF,
        })
    }

    /// Overrides the initial retry backoff.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn attempt(&self, request: &LlmRequest) -> Result<BackendReply, LlmError> {
        let body = json!({
            "model": self.config.model,
            "temperature": request.temperature_hint,
            "messages": [{"role": "user", "content": request.prompt_text}],
        });
        let resp = self
            .http
            .post(&self.config.endpoint)
            .bearer_auth(&self.config.api_key)
            .json(&body)
            .send()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = resp.status();
        let value: Value = resp
            .json()
            .map_err(|e| LlmError::Transport(format!("bad response body: {e}")))?;
        if !status.is_success() {
            return Err(LlmError::Transport(format!("HTTP {status}: {value}")));
        }
        parse_completion(&value)
    }
}

pub(crate) fn parse_completion(value: &Value) -> Result<BackendReply, LlmError> {
    let text = value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| LlmError::Transport(format!("no completion text in {value}")))?;
    let tokens = value.pointer("/usage/total_tokens").and_then(Value::as_u64);
    Ok(BackendReply {
        text: text.to_string(),
        tokens,
    })
}

impl LlmBackend for RemoteBackend {
    fn label(&self) -> String {
        format!("remote:{}", self.config.model)
    }

    fn generate(&self, request: &LlmRequest) -> Result<BackendReply, LlmError> {
        let mut delay = self.backoff;
        let mut last = None;
        for attempt in 1..=ATTEMPTS {
            match self.attempt(request) {
                Ok(r) => return Ok(r),
                Err(e) if e.is_retryable() && attempt < ATTEMPTS => {
                    log::warn!("LLM attempt {attempt} failed: {e}; retrying in {delay:?}");
                    std::thread::sleep(delay);
                    delay *= 2;
                    last = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(last.unwrap_or_else(|| LlmError::Transport("retries exhausted".into())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_chat_completion_shape() {
        let v = json!({
            "choices": [{"message": {"role": "assistant", "content": "hello"}}],
            "usage": {"total_tokens": 12}
        });
        let r = parse_completion(&v).unwrap();
        assert_eq!(r.text, "hello");
        assert_eq!(r.tokens, Some(12));
    }

    #[test]
    fn missing_content_is_transport_error() {
        assert!(parse_completion(&json!({"choices": []}))
            .unwrap_err()
            .is_retryable());
    }

    #[test]
    fn unreachable_endpoint_retries_then_fails() {
        let backend = RemoteBackend::new(RemoteConfig {
            endpoint: "http://127.0.0.1:9/v1/chat/completions".into(),
            api_key: "k".into(),
            model: "m".into(),
            timeout: Duration::from_secs(2),
        })
        .unwrap()
        .with_backoff(Duration::from_millis(1));
        let err = backend.generate(&LlmRequest::new("hi")).unwrap_err();
        assert!(err.is_retryable());
    }
}
