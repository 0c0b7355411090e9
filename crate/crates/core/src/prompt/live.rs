//! Chat-completions HTTP backend.

use std::time::Duration;

use serde_json::{json, Value};

use super::backend::{BackendError, LlmBackend};

/// Environment variable holding the API key.
pub const API_KEY_ENV: &str = "PATHREPO_LLM_KEY";

/// Posts `{"model", "messages": [{"role": "user", "content": prompt}]}` to
/// `<base_url>/chat/completions` and returns the first choice's content.
pub struct ChatCompletionsBackend {
    base_url: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl ChatCompletionsBackend {
    pub fn new(base_url: &str, model: &str, api_key: Option<String>, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key,
            agent: config.into(),
        }
    }

    /// Reads the API key from [`API_KEY_ENV`].
    pub fn from_env(base_url: &str, model: &str, timeout: Duration) -> Self {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::new(base_url, model, key, timeout)
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url)
    }
}

impl LlmBackend for ChatCompletionsBackend {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut request = self.agent.post(&self.endpoint());
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request
            .send_json(&body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(BackendError::Status { code: status, body: text });
        }
        let value: Value =
            serde_json::from_str(&text).map_err(|e| BackendError::Protocol(e.to_string()))?;
        parse_chat_completion(&value)
    }

    fn model_name(&self) -> &str {
        &self.model
    }
}

/// Extracts `choices[0].message.content` from a chat-completions reply.
pub fn parse_chat_completion(value: &Value) -> Result<String, BackendError> {
    value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| BackendError::Protocol("missing choices[0].message.content".into()))
}
