//! Backend for OpenAI-compatible HTTP endpoints.
//!
//! Chat goes to `POST {endpoint}/chat/completions` with a JSON-schema
//! response format, embeddings to `POST {endpoint}/embeddings`, and search to
//! `POST {search_endpoint}` with `{"query", "limit"}`, which must answer
//! `{"results": [{"id", "text", "timestamp"?}]}`.

use std::path::Path;
use std::time::Duration;

use base64::Engine;
use chrono::{DateTime, Utc};
use serde::Deserialize;
use serde_json::{json, Value};

use super::{Backend, BackendConfig, BackendError, ChatRequest, EmbedInput, Embedding, TokenBucket, ENV_API_KEY, ENV_ENDPOINT};
use crate::model::ImageRef;
use crate::retrieval::{EvidenceItem, EvidenceSource};

pub struct HttpBackend {
    agent: ureq::Agent,
    config: BackendConfig,
    api_key: Option<String>,
    limiter: TokenBucket,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.config.endpoint)
            .field("model", &self.config.model_name)
            .finish_non_exhaustive()
    }
}

#[derive(Deserialize)]
struct SearchResult {
    id: String,
    text: String,
    #[serde(default)]
    timestamp: Option<DateTime<Utc>>,
}

impl HttpBackend {
    pub fn new(config: BackendConfig, api_key: Option<String>) -> Result<Self, BackendError> {
        config.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout()))
            .http_status_as_error(false)
            .build()
            .into();
        let limiter = TokenBucket::new(config.rate_limit, config.rate_limit.ceil().max(1.0));
        Ok(Self {
            agent,
            config,
            api_key,
            limiter,
        })
    }

    /// Reads the API key from the environment; an endpoint set there
    /// overrides the configured one.
    pub fn from_env(mut config: BackendConfig) -> Result<Self, BackendError> {
        if let Ok(endpoint) = std::env::var(ENV_ENDPOINT) {
            if !endpoint.trim().is_empty() {
                config.endpoint = endpoint;
            }
        }
        let key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        Self::new(config, key)
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{path}", self.config.endpoint.trim_end_matches('/'))
    }

    /// POSTs `body`, retrying timeouts, transport failures, 429 and 5xx with
    /// exponential backoff.
    fn post(&self, url: &str, body: &Value) -> Result<Value, BackendError> {
        let mut last = BackendError::TransportError("no attempt made".into());
        for attempt in 0..=self.config.retry {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(200u64 << attempt.min(6)));
            }
            self.limiter.acquire();
            let mut req = self.agent.post(url).header("Content-Type", "application/json");
            if let Some(k) = &self.api_key {
                req = req.header("Authorization", &format!("Bearer {k}"));
            }
            match req.send_json(body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let text = resp
                        .body_mut()
                        .read_to_string()
                        .map_err(|e| BackendError::TransportError(e.to_string()));
                    match (status, text) {
                        (200..=299, Ok(t)) => {
                            return serde_json::from_str(&t).map_err(|e| {
                                BackendError::TransportError(format!("invalid JSON from {url}: {e}"))
                            })
                        }
                        (429 | 500..=599, _) => {
                            last = BackendError::TransportError(format!("{url} returned {status}"));
                        }
                        (_, Err(e)) => last = e,
                        (_, Ok(t)) => {
                            return Err(BackendError::TransportError(format!(
                                "{url} returned {status}: {}",
                                t.chars().take(200).collect::<String>()
                            )))
                        }
                    }
                }
                Err(ureq::Error::Timeout(_)) => last = BackendError::Timeout,
                Err(e) => last = BackendError::TransportError(e.to_string()),
            }
            log::warn!("request to {url} failed (attempt {}): {last}", attempt + 1);
        }
        Err(last)
    }

    fn image_part(image: &ImageRef) -> Result<Value, BackendError> {
        let s = image.as_str();
        if s.starts_with("http://") || s.starts_with("https://") || s.starts_with("data:") {
            return Ok(json!({"type": "image_url", "image_url": {"url": s}}));
        }
        if s.starts_with(super::Caption::PREFIX) {
            return Ok(json!({"type": "text", "text": s}));
        }
        let bytes = std::fs::read(s).map_err(|_| BackendError::UnreadableImage(s.to_string()))?;
        let mime = match Path::new(s).extension().and_then(|e| e.to_str()).map(str::to_lowercase).as_deref() {
            Some("png") => "image/png",
            Some("gif") => "image/gif",
            Some("webp") => "image/webp",
            _ => "image/jpeg",
        };
        let data = base64::engine::general_purpose::STANDARD.encode(bytes);
        Ok(json!({"type": "image_url", "image_url": {"url": format!("data:{mime};base64,{data}")}}))
    }
}

impl Backend for HttpBackend {
    fn complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let mut content = vec![json!({"type": "text", "text": req.user})];
        for image in &req.images {
            content.push(Self::image_part(image)?);
        }
        let body = json!({
            "model": self.config.model_name,
            "max_tokens": req.max_tokens,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": req.system},
                {"role": "user", "content": content},
            ],
            "response_format": {
                "type": "json_schema",
                "json_schema": {
                    "name": req.response_schema.name(),
                    "schema": req.response_schema.json_schema(),
                },
            },
        });
        let resp = self.post(&self.url("chat/completions"), &body)?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::TransportError("completion has no message content".into()))
    }

    fn embed(&self, input: &EmbedInput) -> Result<Embedding, BackendError> {
        let text = match input {
            EmbedInput::Text(t) => t,
            EmbedInput::Image(_) => {
                return Err(BackendError::Unsupported("image embeddings over HTTP".into()))
            }
        };
        if text.trim().is_empty() {
            return Err(BackendError::EmptyContent);
        }
        let body = json!({
            "model": self.config.embed_model,
            "input": text,
            "dimensions": self.config.embed_dim,
        });
        let resp = self.post(&self.url("embeddings"), &body)?;
        let values: Vec<f64> = resp
            .pointer("/data/0/embedding")
            .cloned()
            .and_then(|v| serde_json::from_value(v).ok())
            .ok_or_else(|| BackendError::SchemaViolation("embedding response has no vector".into()))?;
        if values.len() != self.config.embed_dim {
            return Err(BackendError::SchemaViolation(format!(
                "embedding has {} dimensions, expected {}",
                values.len(),
                self.config.embed_dim
            )));
        }
        Embedding::new(values)
    }

    fn web_search(&self, query: &str, limit: usize) -> Result<Vec<EvidenceItem>, BackendError> {
        let url = self
            .config
            .search_endpoint
            .clone()
            .unwrap_or_else(|| self.url("search"));
        let resp = self.post(&url, &json!({"query": query, "limit": limit}))?;
        let results: Vec<SearchResult> = resp
            .get("results")
            .cloned()
            .and_then(|v| serde_json::from_value(v).ok())
            .ok_or_else(|| BackendError::SchemaViolation("search response has no results list".into()))?;
        results
            .into_iter()
            .take(limit)
            .map(|r| {
                let e = self.embed(&EmbedInput::Text(r.text.clone()))?;
                Ok(EvidenceItem::new_unscored(r.id, r.text, e, r.timestamp, EvidenceSource::Search))
            })
            .collect()
    }

    fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }
}
