//! Provider abstraction for every external model capability: structured chat
//! completion, embeddings, and web search.
//!
//! Two implementations ship: [`MockBackend`], a deterministic scripted backend
//! used for tests and desk-scale experiments, and [`HttpBackend`], which talks
//! to an OpenAI-compatible endpoint. Agents never call [`Backend::complete`]
//! directly; they go through [`chat`], which validates every response against
//! its registered schema and re-asks once before giving up.

mod embedding;
mod http;
mod ledger;
pub mod lexicon;
mod mock;
mod ratelimit;
pub mod schema;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ImageRef;
use crate::retrieval::EvidenceItem;

pub use embedding::{sparse_hash_embedding, Embedding};
pub use http::HttpBackend;
pub use ledger::{CallKind, CallLedger, CallRecord, LedgeredBackend};
pub use mock::{
    Caption, FailEntry, MockBackend, MockFixtures, ReportBias, ScriptEntry, VerdictEntry, WebDoc, MOCK_FIXTURE_FORMAT,
    MOCK_FIXTURE_VERSION,
};
pub use ratelimit::TokenBucket;
pub use schema::SchemaId;

pub const ENV_API_KEY: &str = "MULTIPRESS_API_KEY";
pub const ENV_ENDPOINT: &str = "MULTIPRESS_ENDPOINT";

/// Separates the original prompt from the correction appended on a re-ask.
pub const REASK_PREFIX: &str = "\n\nYour previous reply was rejected";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("response violates schema: {0}")]
    SchemaViolation(String),
    #[error("transport error: {0}")]
    TransportError(String),
    #[error("cannot embed empty content")]
    EmptyContent,
    #[error("unreadable image `{0}`")]
    UnreadableImage(String),
    #[error("operation not supported by this backend: {0}")]
    Unsupported(String),
    #[error("backend misconfigured: {0}")]
    Config(String),
}

/// Content to embed.
#[derive(Debug, Clone, PartialEq)]
pub enum EmbedInput {
    Text(String),
    Image(ImageRef),
}

/// One structured chat completion request.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub system: String,
    /// The agent's structured prompt, serialized as JSON.
    pub user: String,
    pub images: Vec<ImageRef>,
    pub response_schema: SchemaId,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(schema: SchemaId, user: &impl Serialize) -> Self {
        Self {
            system: schema.system_prompt().to_string(),
            user: serde_json::to_string(user).expect("prompt payloads are plain data"),
            images: Vec::new(),
            response_schema: schema,
            max_tokens: 1024,
        }
    }

    pub fn with_images(mut self, images: Vec<ImageRef>) -> Self {
        self.images = images;
        self
    }
}

/// A chat response that has already passed schema validation.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredResponse {
    pub schema: SchemaId,
    pub value: serde_json::Value,
}

impl StructuredResponse {
    pub fn parse<T: serde::de::DeserializeOwned>(&self) -> Result<T, BackendError> {
        serde_json::from_value(self.value.clone())
            .map_err(|e| BackendError::SchemaViolation(e.to_string()))
    }
}

/// External model capabilities. Implementations are shared read-only across
/// worker threads.
pub trait Backend: Send + Sync {
    /// Raw completion text for a request. Use [`chat`] instead of calling this
    /// directly.
    fn complete(&self, req: &ChatRequest) -> Result<String, BackendError>;

    /// Unit-norm embedding of `input`.
    fn embed(&self, input: &EmbedInput) -> Result<Embedding, BackendError>;

    /// Up to `limit` search results, each tagged with search provenance.
    fn web_search(&self, query: &str, limit: usize) -> Result<Vec<EvidenceItem>, BackendError>;

    fn embed_dim(&self) -> usize;
}

/// Structured chat with schema enforcement: parse, validate against
/// `req.response_schema` plus `extra`, and on a violation re-ask exactly once
/// with the rejection reason appended.
pub fn chat_validated(
    backend: &dyn Backend,
    req: &ChatRequest,
    extra: &dyn Fn(&serde_json::Value) -> Result<(), String>,
) -> Result<StructuredResponse, BackendError> {
    let first = backend.complete(req)?;
    let reason = match check_response(req.response_schema, &first, extra) {
        Ok(value) => {
            return Ok(StructuredResponse {
                schema: req.response_schema,
                value,
            })
        }
        Err(reason) => reason,
    };
    log::debug!("re-asking after schema violation: {reason}");
    let mut retry = req.clone();
    retry.user = format!(
        "{}{REASK_PREFIX} ({reason}). Reply with a single JSON object matching the `{}` schema.",
        req.user,
        req.response_schema.name()
    );
    let second = backend.complete(&retry)?;
    check_response(req.response_schema, &second, extra)
        .map(|value| StructuredResponse {
            schema: req.response_schema,
            value,
        })
        .map_err(BackendError::SchemaViolation)
}

/// [`chat_validated`] with schema checks only.
pub fn chat(backend: &dyn Backend, req: &ChatRequest) -> Result<StructuredResponse, BackendError> {
    chat_validated(backend, req, &|_| Ok(()))
}

fn check_response(
    schema: SchemaId,
    raw: &str,
    extra: &dyn Fn(&serde_json::Value) -> Result<(), String>,
) -> Result<serde_json::Value, String> {
    let value: serde_json::Value =
        serde_json::from_str(strip_code_fence(raw)).map_err(|e| format!("not JSON: {e}"))?;
    schema.validate(&value)?;
    extra(&value)?;
    Ok(value)
}

/// Models sometimes wrap JSON in a markdown fence even when asked not to.
fn strip_code_fence(raw: &str) -> &str {
    let t = raw.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let rest = rest.trim_start_matches("json");
        if let Some(body) = rest.strip_suffix("```") {
            return body.trim();
        }
    }
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Http,
}

/// How to construct a backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: String,
    pub model_name: String,
    pub embed_model: String,
    /// Search endpoint; defaults to `{endpoint}/search`.
    pub search_endpoint: Option<String>,
    pub embed_dim: usize,
    pub timeout_secs: f64,
    pub retry: u32,
    /// Requests per second for the HTTP token bucket; 0 disables limiting.
    pub rate_limit: f64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint: "http://localhost:8080/v1".into(),
            model_name: "gpt-4o".into(),
            embed_model: "text-embedding-3-small".into(),
            search_endpoint: None,
            embed_dim: 512,
            timeout_secs: 60.0,
            retry: 3,
            rate_limit: 0.0,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.embed_dim < 8 {
            return Err(BackendError::Config(format!(
                "embed_dim must be at least 8, got {}",
                self.embed_dim
            )));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(BackendError::Config("timeout must be positive".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Replies from a fixed list, one entry per call.
    struct Scripted {
        replies: Vec<&'static str>,
        calls: AtomicUsize,
    }

    impl Backend for Scripted {
        fn complete(&self, _req: &ChatRequest) -> Result<String, BackendError> {
            let i = self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(self.replies[i.min(self.replies.len() - 1)].to_string())
        }
        fn embed(&self, _input: &EmbedInput) -> Result<Embedding, BackendError> {
            Err(BackendError::Unsupported("embed".into()))
        }
        fn web_search(&self, _q: &str, _l: usize) -> Result<Vec<EvidenceItem>, BackendError> {
            Ok(vec![])
        }
        fn embed_dim(&self) -> usize {
            8
        }
    }

    const GOOD: &str = r#"{"verdict":"supported","confidence":0.9}"#;

    #[test]
    fn reasks_once_then_succeeds() {
        let b = Scripted {
            replies: vec!["not json", GOOD],
            calls: AtomicUsize::new(0),
        };
        let req = ChatRequest::new(SchemaId::Verify, &serde_json::json!({"claim": "x"}));
        let resp = chat(&b, &req).unwrap();
        assert_eq!(resp.value["verdict"], "supported");
        assert_eq!(b.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn second_violation_is_a_hard_error() {
        let b = Scripted {
            replies: vec![r#"{"verdict":"maybe"}"#],
            calls: AtomicUsize::new(0),
        };
        let req = ChatRequest::new(SchemaId::Verify, &serde_json::json!({}));
        assert!(matches!(chat(&b, &req), Err(BackendError::SchemaViolation(_))));
        assert_eq!(b.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn fenced_json_is_accepted() {
        let b = Scripted {
            replies: vec!["```json\n{\"verdict\":\"refuted\",\"confidence\":0.2}\n```"],
            calls: AtomicUsize::new(0),
        };
        let req = ChatRequest::new(SchemaId::Verify, &serde_json::json!({}));
        assert_eq!(chat(&b, &req).unwrap().value["verdict"], "refuted");
    }

    #[test]
    fn config_invariants() {
        let mut c = BackendConfig::default();
        assert!(c.validate().is_ok());
        c.embed_dim = 4;
        assert!(c.validate().is_err());
        c.embed_dim = 8;
        c.timeout_secs = 0.0;
        assert!(c.validate().is_err());
    }
}
