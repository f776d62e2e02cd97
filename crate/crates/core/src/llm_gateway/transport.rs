//! Wire transports for chat completions and embeddings.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    /// Rate limiting, server errors and timeouts; worth retrying.
    Transient,
    /// Rejected credentials; fatal for the run.
    Auth,
    /// Anything else the endpoint will keep rejecting.
    Permanent,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{message}")]
pub struct TransportError {
    pub kind: FailureKind,
    pub message: String,
}

impl TransportError {
    pub fn transient(message: impl Into<String>) -> Self {
        Self {
            kind: FailureKind::Transient,
            message: message.into(),
        }
    }

    pub fn auth(message: impl Into<String>) -> Self {
        Self {
            kind: FailureKind::Auth,
            message: message.into(),
        }
    }

    pub fn permanent(message: impl Into<String>) -> Self {
        Self {
            kind: FailureKind::Permanent,
            message: message.into(),
        }
    }

    pub fn from_status(status: u16, body: &str) -> Self {
        let message = format!("HTTP {status}: {}", body.chars().take(200).collect::<String>());
        match status {
            401 | 403 => Self::auth(message),
            408 | 429 | 500..=599 => Self::transient(message),
            _ => Self::permanent(message),
        }
    }
}

/// Sends one prompt to a chat model and returns the assistant message text.
pub trait ChatTransport: Send + Sync {
    fn complete(&self, spec: &ModelSpec, prompt: &str) -> Result<String, TransportError>;
}

/// Returns the raw (unnormalized) embedding of a text.
pub trait EmbeddingTransport: Send + Sync {
    fn embed(&self, model_id: &str, text: &str) -> Result<Vec<f64>, TransportError>;
}

#[derive(Debug, Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatReplyMessage,
}

#[derive(Debug, Deserialize)]
struct ChatReplyMessage {
    content: Option<String>,
}

/// Builds the request body for `POST /v1/chat/completions`.
pub fn chat_request_body(spec: &ModelSpec, prompt: &str) -> Value {
    serde_json::to_value(ChatRequest {
        model: &spec.model_id,
        messages: vec![ChatMessage {
            role: "user",
            content: prompt,
        }],
        temperature: spec.decoding.temperature,
        max_tokens: spec.decoding.max_tokens,
        seed: spec.decoding.seed,
    })
    .expect("request serializes")
}

/// Extracts the first choice's message content from a chat completion body.
pub fn chat_reply_content(body: &str) -> Result<String, TransportError> {
    let resp: ChatResponse =
        serde_json::from_str(body).map_err(|e| TransportError::permanent(format!("malformed completion body: {e}")))?;
    resp.choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| TransportError::permanent("completion has no message content"))
}

/// Appends `suffix` to a base URL unless it already ends with it.
pub fn endpoint_url(base: &str, suffix: &str) -> String {
    let base = base.trim_end_matches('/');
    if base.ends_with(suffix) {
        base.to_string()
    } else {
        format!("{base}/{suffix}")
    }
}

/// Blocking HTTP transport for OpenAI-compatible servers. API keys are read
/// from the environment at request time and never stored.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| TransportError::permanent(e.to_string()))?;
        Ok(Self { client })
    }

    fn post(&self, url: &str, key_env: Option<&str>, body: &Value) -> Result<String, TransportError> {
        let mut req = self.client.post(url).json(body);
        if let Some(var) = key_env {
            let key = std::env::var(var)
                .map_err(|_| TransportError::auth(format!("environment variable {var} is not set")))?;
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() || e.is_connect() || e.is_request() {
                TransportError::transient(e.to_string())
            } else {
                TransportError::permanent(e.to_string())
            }
        })?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| TransportError::transient(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(TransportError::from_status(status, &text));
        }
        Ok(text)
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&self, spec: &ModelSpec, prompt: &str) -> Result<String, TransportError> {
        let url = endpoint_url(&spec.endpoint_url, "chat/completions");
        let body = self.post(&url, spec.api_key_env.as_deref(), &chat_request_body(spec, prompt))?;
        chat_reply_content(&body)
    }
}

/// Embedding endpoint speaking the OpenAI `POST /v1/embeddings` format.
pub struct HttpEmbeddingTransport {
    inner: HttpTransport,
    endpoint_url: String,
    api_key_env: Option<String>,
}

impl HttpEmbeddingTransport {
    pub fn new(
        endpoint_url: impl Into<String>,
        api_key_env: Option<String>,
        timeout: Duration,
    ) -> Result<Self, TransportError> {
        Ok(Self {
            inner: HttpTransport::new(timeout)?,
            endpoint_url: endpoint_url.into(),
            api_key_env,
        })
    }
}

pub fn embedding_reply_vector(body: &str) -> Result<Vec<f64>, TransportError> {
    let v: Value =
        serde_json::from_str(body).map_err(|e| TransportError::permanent(format!("malformed embedding body: {e}")))?;
    v["data"][0]["embedding"]
        .as_array()
        .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
        .ok_or_else(|| TransportError::permanent("embedding body has no data[0].embedding"))
}

impl EmbeddingTransport for HttpEmbeddingTransport {
    fn embed(&self, model_id: &str, text: &str) -> Result<Vec<f64>, TransportError> {
        let url = endpoint_url(&self.endpoint_url, "embeddings");
        let body = json!({ "model": model_id, "input": text });
        let reply = self.inner.post(&url, self.api_key_env.as_deref(), &body)?;
        embedding_reply_vector(&reply)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm_gateway::Decoding;

    #[test]
    fn request_body_shape() {
        let spec = ModelSpec {
            model_id: "mistral-7b-instruct-v0.2".into(),
            endpoint_url: "http://localhost:8000/v1".into(),
            api_key_env: None,
            decoding: Decoding {
                temperature: 0.0,
                max_tokens: 256,
                seed: Some(7),
            },
        };
        let body = chat_request_body(&spec, "hi");
        assert_eq!(body["model"], "mistral-7b-instruct-v0.2");
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"], "hi");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["max_tokens"], 256);
        assert_eq!(body["seed"], 7);
    }

    #[test]
    fn reply_content() {
        let body = r#"{"id":"x","choices":[{"index":0,"message":{"role":"assistant","content":"[3, \"ok\"]"}}]}"#;
        assert_eq!(chat_reply_content(body).unwrap(), "[3, \"ok\"]");
        assert!(chat_reply_content(r#"{"choices":[]}"#).is_err());
    }

    #[test]
    fn status_classification() {
        assert_eq!(TransportError::from_status(429, "").kind, FailureKind::Transient);
        assert_eq!(TransportError::from_status(503, "").kind, FailureKind::Transient);
        assert_eq!(TransportError::from_status(401, "").kind, FailureKind::Auth);
        assert_eq!(TransportError::from_status(400, "").kind, FailureKind::Permanent);
    }

    #[test]
    fn url_joining() {
        assert_eq!(
            endpoint_url("http://h/v1/", "chat/completions"),
            "http://h/v1/chat/completions"
        );
        assert_eq!(
            endpoint_url("http://h/v1/chat/completions", "chat/completions"),
            "http://h/v1/chat/completions"
        );
    }

    #[test]
    fn embedding_body() {
        let v = embedding_reply_vector(r#"{"data":[{"embedding":[3,4]}]}"#).unwrap();
        assert_eq!(v, vec![3.0, 4.0]);
    }
}
