//! Generic chat-completion HTTP backend.
//!
//! POSTs `{model, messages, temperature, max_tokens}` and reads the reply
//! from `choices[0].message.content`, falling back to `content[0].text` or a
//! top-level `text`/`output_text` string.

use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, BackendError, BackendKind, ChatRequest};

/// Environment variable holding the API key.
pub const API_KEY_ENV: &str = "KBFORGE_API_KEY";

#[derive(Debug)]
pub struct HttpBackend {
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            api_key,
            agent,
        }
    }

    /// Build from an endpoint, reading the key from `KBFORGE_API_KEY`.
    pub fn from_env(endpoint: impl Into<String>) -> Self {
        Self::new(endpoint, std::env::var(API_KEY_ENV).ok(), Duration::from_secs(120))
    }
}

/// Request body sent to the endpoint.
pub fn request_body(req: &ChatRequest) -> Value {
    let mut messages = Vec::new();
    if let Some(system) = &req.system_text {
        messages.push(json!({"role": "system", "content": system}));
    }
    messages.push(json!({"role": "user", "content": req.user_text}));
    json!({
        "model": req.model_id,
        "messages": messages,
        "temperature": req.temperature,
        "max_tokens": req.max_output_tokens,
    })
}

/// Classify an HTTP status. `None` means success.
pub fn classify_status(status: u16, body: &str) -> Option<BackendError> {
    let snippet: String = body.chars().take(200).collect();
    match status {
        200..=299 => None,
        408 | 409 | 425 | 429 | 500..=599 => Some(BackendError::Transient(format!("HTTP {status}: {snippet}"))),
        _ => Some(BackendError::Permanent(format!("HTTP {status}: {snippet}"))),
    }
}

/// Pull the response text out of a completion payload.
pub fn extract_text(body: &Value) -> Result<String, BackendError> {
    let candidates = [
        body.pointer("/choices/0/message/content"),
        body.pointer("/content/0/text"),
        body.get("output_text"),
        body.get("text"),
    ];
    candidates
        .into_iter()
        .flatten()
        .find_map(|v| v.as_str().map(str::to_string))
        .ok_or_else(|| BackendError::Malformed("no completion text in response body".into()))
}

impl Backend for HttpBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Http
    }

    fn call(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let mut call = self.agent.post(&self.endpoint).header("content-type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("authorization", &format!("Bearer {key}"));
        }
        let mut resp = call.send_json(request_body(req)).map_err(|e| match e {
            ureq::Error::Timeout(_) | ureq::Error::Io(_) | ureq::Error::ConnectionFailed => {
                BackendError::Transient(e.to_string())
            }
            other => BackendError::Permanent(other.to_string()),
        })?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        if let Some(err) = classify_status(status, &text) {
            return Err(err);
        }
        let body: Value =
            serde_json::from_str(&text).map_err(|e| BackendError::Malformed(format!("invalid JSON body: {e}")))?;
        extract_text(&body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn body_shape() {
        let req = ChatRequest::new("m1", "hello").with_system("sys");
        let body = request_body(&req);
        assert_eq!(body["model"], "m1");
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["content"], "hello");
        assert_eq!(body["max_tokens"], req.max_output_tokens);
    }

    #[test]
    fn status_classes() {
        assert!(classify_status(200, "").is_none());
        assert!(matches!(classify_status(429, ""), Some(BackendError::Transient(_))));
        assert!(matches!(classify_status(503, ""), Some(BackendError::Transient(_))));
        assert!(matches!(classify_status(401, ""), Some(BackendError::Permanent(_))));
        assert!(matches!(classify_status(400, ""), Some(BackendError::Permanent(_))));
    }

    #[test]
    fn text_extraction() {
        let openai = json!({"choices": [{"message": {"content": "hi"}}]});
        assert_eq!(extract_text(&openai).unwrap(), "hi");
        let blocks = json!({"content": [{"type": "text", "text": "yo"}]});
        assert_eq!(extract_text(&blocks).unwrap(), "yo");
        assert!(matches!(extract_text(&json!({"x": 1})), Err(BackendError::Malformed(_))));
    }
}
