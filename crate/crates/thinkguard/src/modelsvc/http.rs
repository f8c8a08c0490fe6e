//! Chat-completion client over HTTP.

use std::time::Duration;

use serde_json::{json, Value};

use super::{CallError, ChatRequest, ModelClient, ServiceClientConfig};

pub struct HttpClient {
    id: String,
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpClient {
    /// Reads the bearer token from the configured environment variable; a
    /// missing variable sends no `Authorization` header.
    pub fn new(id: impl Into<String>, config: &ServiceClientConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            id: id.into(),
            endpoint: config.endpoint.clone(),
            api_key: std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty()),
            agent,
        }
    }

    pub fn with_endpoint(mut self, endpoint: impl Into<String>) -> Self {
        self.endpoint = endpoint.into();
        self
    }
}

/// Extracts `choices[0].message.content`.
pub fn response_text(body: &Value) -> Option<&str> {
    body.get("choices")?.get(0)?.get("message")?.get("content")?.as_str()
}

impl ModelClient for HttpClient {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, CallError> {
        if self.endpoint.is_empty() {
            return Err(CallError::Fatal("no endpoint configured".into()));
        }
        let body = json!({
            "model": request.model,
            "messages": request.messages,
            "temperature": request.temperature,
        });
        let mut call = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call.send_json(&body).map_err(|e| CallError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(CallError::Transient(format!("HTTP {status}")));
        }
        if status >= 400 {
            return Err(CallError::Fatal(format!("HTTP {status}")));
        }
        let v: Value = resp.body_mut().read_json().map_err(|e| CallError::Transient(e.to_string()))?;
        response_text(&v)
            .map(str::to_string)
            .ok_or_else(|| CallError::Fatal("response has no choices[0].message.content".into()))
    }
}
