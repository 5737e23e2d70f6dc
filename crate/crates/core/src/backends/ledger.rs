//! Per-instance accounting of external calls.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, ChatRequest, EmbedInput, Embedding, SchemaId};
use crate::retrieval::EvidenceItem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CallKind {
    Chat { schema: SchemaId },
    Embed,
    Search,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    #[serde(flatten)]
    pub kind: CallKind,
    pub ok: bool,
}

/// Ordered log of every backend call made for one instance.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CallLedger {
    pub calls: Vec<CallRecord>,
}

impl CallLedger {
    pub fn chats(&self) -> usize {
        self.count(|k| matches!(k, CallKind::Chat { .. }))
    }

    pub fn chats_for(&self, schema: SchemaId) -> usize {
        self.count(|k| *k == CallKind::Chat { schema })
    }

    pub fn embeds(&self) -> usize {
        self.count(|k| *k == CallKind::Embed)
    }

    pub fn searches(&self) -> usize {
        self.count(|k| *k == CallKind::Search)
    }

    /// Search and verification calls made by the reasoning loop.
    pub fn actions(&self) -> usize {
        self.searches() + self.chats_for(SchemaId::Verify)
    }

    fn count(&self, pred: impl Fn(&CallKind) -> bool) -> usize {
        self.calls.iter().filter(|c| pred(&c.kind)).count()
    }
}

/// Wraps a backend and records every call into a [`CallLedger`].
pub struct LedgeredBackend<'a> {
    inner: &'a dyn Backend,
    ledger: Mutex<CallLedger>,
}

impl<'a> LedgeredBackend<'a> {
    pub fn new(inner: &'a dyn Backend) -> Self {
        Self {
            inner,
            ledger: Mutex::new(CallLedger::default()),
        }
    }

    pub fn ledger(&self) -> CallLedger {
        self.ledger.lock().expect("ledger lock poisoned").clone()
    }

    fn record<T>(&self, kind: CallKind, r: Result<T, BackendError>) -> Result<T, BackendError> {
        self.ledger
            .lock()
            .expect("ledger lock poisoned")
            .calls
            .push(CallRecord { kind, ok: r.is_ok() });
        r
    }
}

impl Backend for LedgeredBackend<'_> {
    fn complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let kind = CallKind::Chat {
            schema: req.response_schema,
        };
        self.record(kind, self.inner.complete(req))
    }

    fn embed(&self, input: &EmbedInput) -> Result<Embedding, BackendError> {
        self.record(CallKind::Embed, self.inner.embed(input))
    }

    fn web_search(&self, query: &str, limit: usize) -> Result<Vec<EvidenceItem>, BackendError> {
        self.record(CallKind::Search, self.inner.web_search(query, limit))
    }

    fn embed_dim(&self) -> usize {
        self.inner.embed_dim()
    }
}
