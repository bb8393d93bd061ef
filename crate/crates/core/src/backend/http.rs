//! HTTP backend speaking the de-facto chat-completions JSON wire format.

use std::time::{Duration, Instant};

use serde::Deserialize;

use super::{ChatBackend, ChatRequest, Completion};
use crate::error::{Error, Result};

/// Chat-completions client with bounded retries.
///
/// Retries happen only on transport errors and HTTP 5xx responses, with the
/// configured backoff schedule between attempts (default 1s, 2s, 4s). Any
/// other status fails immediately: a 4xx will not get better by waiting.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    url: String,
    model: String,
    api_key: Option<String>,
    backoff: Vec<Duration>,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Debug, Deserialize)]
struct WireMessage {
    content: String,
}

#[derive(Debug, Deserialize)]
struct WireUsage {
    #[serde(default)]
    completion_tokens: Option<u32>,
}

impl HttpBackend {
    /// `url` is the full completions endpoint, e.g.
    /// `http://localhost:8000/v1/chat/completions`.
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        HttpBackend {
            client: reqwest::blocking::Client::new(),
            url: url.into(),
            model: model.into(),
            api_key: None,
            backoff: vec![
                Duration::from_secs(1),
                Duration::from_secs(2),
                Duration::from_secs(4),
            ],
        }
    }

    /// Bearer token added as `Authorization` header when present.
    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    /// Replaces the retry backoff schedule; its length is the retry count.
    pub fn with_backoff(mut self, backoff: Vec<Duration>) -> Self {
        self.backoff = backoff;
        self
    }

    fn send_once(&self, body: &serde_json::Value) -> std::result::Result<Completion, TryError> {
        let mut request = self.client.post(&self.url).json(body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let started = Instant::now();
        let response = request
            .send()
            .map_err(|e| TryError::Retryable(format!("transport: {e}")))?;
        let status = response.status();
        if status.is_server_error() {
            return Err(TryError::Retryable(format!("server status {status}")));
        }
        if !status.is_success() {
            return Err(TryError::Fatal(Error::BackendUnavailable {
                attempts: 1,
                detail: format!("status {status}"),
            }));
        }
        let latency_ms = started.elapsed().as_millis() as u64;
        let wire: WireResponse = response
            .json()
            .map_err(|e| TryError::Fatal(Error::MalformedResponse(e.to_string())))?;
        let choice = wire
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| TryError::Fatal(Error::MalformedResponse("empty choices".into())))?;
        Ok(Completion {
            text: choice.message.content,
            reported_token_count: wire.usage.and_then(|u| u.completion_tokens),
            backend_id: self.id(),
            latency_ms,
        })
    }
}

enum TryError {
    /// Transport failure or 5xx: worth retrying.
    Retryable(String),
    /// Anything else: give up immediately.
    Fatal(Error),
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<Completion> {
        let mut body = serde_json::json!({
            "model": self.model,
            "messages": request.messages,
            "temperature": request.params.temperature,
            "max_tokens": request.params.max_output_tokens,
        });
        if let Some(seed) = request.params.seed {
            body["seed"] = serde_json::json!(seed);
        }

        let attempts = self.backoff.len() as u32 + 1;
        let mut last_detail = String::new();
        for (attempt, pause) in std::iter::once(None)
            .chain(self.backoff.iter().map(Some))
            .enumerate()
        {
            if let Some(pause) = pause {
                std::thread::sleep(*pause);
            }
            match self.send_once(&body) {
                Ok(completion) => return Ok(completion),
                Err(TryError::Fatal(err)) => return Err(err),
                Err(TryError::Retryable(detail)) => {
                    log::warn!(
                        "backend attempt {}/{} for {} failed: {detail}",
                        attempt + 1,
                        attempts,
                        request.route
                    );
                    last_detail = detail;
                }
            }
        }
        Err(Error::BackendUnavailable {
            attempts,
            detail: last_detail,
        })
    }

    fn id(&self) -> String {
        format!("http:{}", self.model)
    }
}
