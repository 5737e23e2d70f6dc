//! The retrieval agent: knowledge-base ingestion, an exact-scan vector index,
//! cross-modal scoring, threshold filtering and optional recency decay.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};
use std::io::BufRead;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{Backend, BackendError, EmbedInput, Embedding};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error("embedding dimension {got} does not match index dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("duplicate evidence id `{0}`")]
    DuplicateId(String),
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("{malformed} of {total} KB records are malformed (limit 1%)")]
    TooManyMalformed { malformed: usize, total: usize },
    #[error("retrieval needs a text or image query embedding")]
    NoQuery,
    #[error("invalid retrieval config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvidenceSource {
    Kb,
    Search,
}

/// One knowledge snippet with its embedding and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub id: String,
    pub text: String,
    pub embedding: Embedding,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<DateTime<Utc>>,
    pub source: EvidenceSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_tag: Option<String>,
    /// Set by [`retrieve`]; `None` until then.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl EvidenceItem {
    pub fn new_unscored(
        id: impl Into<String>,
        text: impl Into<String>,
        embedding: Embedding,
        timestamp: Option<DateTime<Utc>>,
        source: EvidenceSource,
    ) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            embedding,
            timestamp,
            source,
            source_tag: None,
            score: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    /// Weight of the text similarity against the image similarity.
    pub beta: f64,
    pub top_k: usize,
    pub theta_min: f64,
    /// Recency half-life in days; `None` disables decay.
    pub recency_half_life: Option<f64>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            top_k: 5,
            theta_min: 0.15,
            recency_half_life: None,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(RetrievalError::BadConfig(format!("beta {} outside [0, 1]", self.beta)));
        }
        if self.top_k < 1 {
            return Err(RetrievalError::BadConfig("top_k must be at least 1".into()));
        }
        if !(-1.0..=1.0).contains(&self.theta_min) {
            return Err(RetrievalError::BadConfig(format!(
                "theta_min {} outside [-1, 1]",
                self.theta_min
            )));
        }
        if let Some(h) = self.recency_half_life {
            if !(h > 0.0) {
                return Err(RetrievalError::BadConfig("recency half-life must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Immutable evidence store with an exhaustive exact-scan index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeBase {
    items: Vec<EvidenceItem>,
    dim: usize,
}

impl KnowledgeBase {
    /// Indexes `items` in insertion order. The dimension is taken from the
    /// first item.
    pub fn build(items: Vec<EvidenceItem>) -> Result<Self, RetrievalError> {
        let dim = items.first().map_or(0, |i| i.embedding.dim());
        let mut ids = BTreeSet::new();
        for item in &items {
            if item.embedding.dim() != dim {
                return Err(RetrievalError::DimensionMismatch {
                    expected: dim,
                    got: item.embedding.dim(),
                });
            }
            if !ids.insert(item.id.as_str()) {
                return Err(RetrievalError::DuplicateId(item.id.clone()));
            }
        }
        Ok(Self { items, dim })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn items(&self) -> &[EvidenceItem] {
        &self.items
    }

    pub fn get(&self, id: &str) -> Option<&EvidenceItem> {
        self.items.iter().find(|i| i.id == id)
    }

    pub fn newest_timestamp(&self) -> Option<DateTime<Utc>> {
        self.items.iter().filter_map(|i| i.timestamp).max()
    }
}

fn cosine(a: &Embedding, b: &Embedding) -> Result<f64, RetrievalError> {
    a.cosine(b).ok_or(RetrievalError::DimensionMismatch {
        expected: a.dim(),
        got: b.dim(),
    })
}

/// `β·cos(e_T, e_j) + (1 − β)·cos(e_I, e_j)`. A missing image embedding forces
/// β to 1 and a missing text embedding forces it to 0.
pub fn score_item(
    e_t: Option<&Embedding>,
    e_i: Option<&Embedding>,
    e_j: &Embedding,
    beta: f64,
) -> Result<f64, RetrievalError> {
    match (e_t, e_i) {
        (Some(t), Some(i)) => Ok(beta * cosine(t, e_j)? + (1.0 - beta) * cosine(i, e_j)?),
        (Some(t), None) => cosine(t, e_j),
        (None, Some(i)) => cosine(i, e_j),
        (None, None) => Err(RetrievalError::NoQuery),
    }
}

/// `s · 2^(−age / half_life)` with age in days; undated items keep their score
/// and future-dated items count as age zero.
pub fn recency_weight(
    score: f64,
    timestamp: Option<DateTime<Utc>>,
    reference: Option<DateTime<Utc>>,
    half_life_days: f64,
) -> f64 {
    match (timestamp, reference) {
        (Some(ts), Some(now)) => {
            let age_days = ((now - ts).num_milliseconds() as f64 / 86_400_000.0).max(0.0);
            score * 2f64.powf(-age_days / half_life_days)
        }
        _ => score,
    }
}

/// Ranking order: higher score first, then newer timestamp (dated before
/// undated), then lexical id.
pub fn rank_order(a: &EvidenceItem, b: &EvidenceItem) -> Ordering {
    let sa = a.score.unwrap_or(f64::NEG_INFINITY);
    let sb = b.score.unwrap_or(f64::NEG_INFINITY);
    sb.total_cmp(&sa)
        .then_with(|| b.timestamp.cmp(&a.timestamp))
        .then_with(|| a.id.cmp(&b.id))
}

/// Heap entry whose greatest element is the worst-ranked item, so the heap
/// can evict it when a better candidate arrives.
struct Worst(EvidenceItem);

impl PartialEq for Worst {
    fn eq(&self, other: &Self) -> bool {
        rank_order(&self.0, &other.0) == Ordering::Equal
    }
}
impl Eq for Worst {}
impl PartialOrd for Worst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Worst {
    fn cmp(&self, other: &Self) -> Ordering {
        rank_order(&self.0, &other.0)
    }
}

/// Top-`k` items by (recency-adjusted) score among those whose raw score is
/// at least `theta_min`. `reference` anchors recency ages; when absent the
/// newest KB timestamp is used.
pub fn retrieve(
    kb: &KnowledgeBase,
    e_t: Option<&Embedding>,
    e_i: Option<&Embedding>,
    cfg: &RetrievalConfig,
    reference: Option<DateTime<Utc>>,
) -> Result<Vec<EvidenceItem>, RetrievalError> {
    if kb.is_empty() {
        return Ok(Vec::new());
    }
    let reference = reference.or_else(|| kb.newest_timestamp());
    let mut heap: BinaryHeap<Worst> = BinaryHeap::with_capacity(cfg.top_k + 1);
    for item in kb.items() {
        let raw = score_item(e_t, e_i, &item.embedding, cfg.beta)?;
        if raw < cfg.theta_min {
            continue;
        }
        let score = match cfg.recency_half_life {
            Some(h) => recency_weight(raw, item.timestamp, reference, h),
            None => raw,
        };
        let mut scored = item.clone();
        scored.score = Some(score);
        let candidate = Worst(scored);
        if heap.len() < cfg.top_k {
            heap.push(candidate);
        } else if let Some(worst) = heap.peek() {
            if candidate < *worst {
                heap.pop();
                heap.push(candidate);
            }
        }
    }
    // ascending Worst order is best-first
    Ok(heap.into_sorted_vec().into_iter().map(|w| w.0).collect())
}

/// A raw knowledge-base record before embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbRecord {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_tag: Option<String>,
}

/// Outcome of reading a KB file.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport {
    pub items: Vec<EvidenceItem>,
    /// `(line number, reason)` for each skipped record.
    pub malformed: Vec<(usize, String)>,
}

/// Reads and embeds a line-delimited KB file. Blank lines are ignored;
/// malformed lines are reported and skipped, and more than 1% malformed
/// aborts the ingest.
pub fn kb_ingest(path: &Path, backend: &dyn Backend) -> Result<IngestReport, RetrievalError> {
    let file = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => RetrievalError::FileNotFound(path.display().to_string()),
        _ => RetrievalError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        },
    })?;
    ingest_reader(std::io::BufReader::new(file), backend)
}

pub fn ingest_reader(reader: impl BufRead, backend: &dyn Backend) -> Result<IngestReport, RetrievalError> {
    let mut records = Vec::new();
    let mut malformed = Vec::new();
    let mut total = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| RetrievalError::Io {
            path: "<kb>".into(),
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        match serde_json::from_str::<KbRecord>(&line) {
            Ok(r) if r.text.trim().is_empty() => malformed.push((idx + 1, "empty `text`".to_string())),
            Ok(r) if r.id.trim().is_empty() => malformed.push((idx + 1, "empty `id`".to_string())),
            Ok(r) => records.push(r),
            Err(e) => malformed.push((idx + 1, e.to_string())),
        }
    }
    for (line, reason) in &malformed {
        log::warn!("KB line {line}: {reason}");
    }
    if malformed.len() * 100 > total {
        return Err(RetrievalError::TooManyMalformed {
            malformed: malformed.len(),
            total,
        });
    }
    let mut items = Vec::with_capacity(records.len());
    for r in records {
        let embedding = backend.embed(&EmbedInput::Text(r.text.clone()))?;
        let mut item = EvidenceItem::new_unscored(r.id, r.text, embedding, r.timestamp, EvidenceSource::Kb);
        item.source_tag = r.source_tag;
        items.push(item);
    }
    Ok(IngestReport { items, malformed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{sparse_hash_embedding, MockBackend, MockFixtures};
    use proptest::prelude::*;

    fn item(id: &str, v: Vec<f64>) -> EvidenceItem {
        EvidenceItem::new_unscored(id, id, Embedding::unit(v), None, EvidenceSource::Kb)
    }

    fn unit2(theta: f64) -> Embedding {
        Embedding::unit(vec![theta.cos(), theta.sin()])
    }

    #[test]
    fn score_hand_value() {
        // cos_T = 0.8 and cos_I = 0.2 by construction
        let e_j = Embedding::unit(vec![1.0, 0.0]);
        let e_t = unit2(0.8f64.acos());
        let e_i = unit2(0.2f64.acos());
        let s = score_item(Some(&e_t), Some(&e_i), &e_j, 0.7).unwrap();
        assert!((s - 0.62).abs() < 1e-12);
        let s1 = score_item(Some(&e_t), Some(&e_i), &e_j, 1.0).unwrap();
        assert!((s1 - 0.8).abs() < 1e-12);
        let same = score_item(Some(&e_j), Some(&e_j), &e_j, 0.3).unwrap();
        assert!((same - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_flagged_image_forces_text_similarity() {
        let e_j = Embedding::unit(vec![1.0, 0.0]);
        let e_t = unit2(0.5f64.acos());
        assert!((score_item(Some(&e_t), None, &e_j, 0.2).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(score_item(None, None, &e_j, 0.5), Err(RetrievalError::NoQuery));
    }

    #[test]
    fn build_rejects_duplicates_and_mixed_dims() {
        assert!(KnowledgeBase::build(vec![]).unwrap().is_empty());
        let dup = vec![item("a", vec![1.0, 0.0]), item("a", vec![0.0, 1.0])];
        assert_eq!(KnowledgeBase::build(dup), Err(RetrievalError::DuplicateId("a".into())));
        let mixed = vec![item("a", vec![1.0, 0.0]), item("b", vec![0.0, 1.0, 0.0])];
        assert!(matches!(
            KnowledgeBase::build(mixed),
            Err(RetrievalError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn threshold_drops_everything() {
        let kb = KnowledgeBase::build(vec![item("a", vec![0.0, 1.0])]).unwrap();
        let q = Embedding::unit(vec![1.0, 0.0]);
        let out = retrieve(&kb, Some(&q), None, &RetrievalConfig::default(), None).unwrap();
        assert!(out.is_empty());
        let empty = KnowledgeBase::default();
        assert!(retrieve(&empty, Some(&q), None, &RetrievalConfig::default(), None)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn ties_prefer_newer_then_lexical_id() {
        let ts = |d: u32| Some(format!("2024-01-{d:02}T00:00:00Z").parse().unwrap());
        let mut a = item("b", vec![1.0, 0.0]);
        a.timestamp = ts(1);
        let mut b = item("c", vec![1.0, 0.0]);
        b.timestamp = ts(5);
        let c = item("a", vec![1.0, 0.0]);
        let d = item("d", vec![1.0, 0.0]);
        let kb = KnowledgeBase::build(vec![a, b, c, d]).unwrap();
        let q = Embedding::unit(vec![1.0, 0.0]);
        let cfg = RetrievalConfig { top_k: 4, ..Default::default() };
        let ids: Vec<_> = retrieve(&kb, Some(&q), None, &cfg, None)
            .unwrap()
            .into_iter()
            .map(|i| i.id)
            .collect();
        assert_eq!(ids, vec!["c", "b", "a", "d"]);
    }

    #[test]
    fn recency_halves_per_half_life() {
        let now: DateTime<Utc> = "2024-03-11T00:00:00Z".parse().unwrap();
        let then: DateTime<Utc> = "2024-03-01T00:00:00Z".parse().unwrap();
        assert!((recency_weight(0.8, Some(then), Some(now), 10.0) - 0.4).abs() < 1e-12);
        assert_eq!(recency_weight(0.8, None, Some(now), 10.0), 0.8);
        assert_eq!(recency_weight(0.8, Some(now), Some(then), 10.0), 0.8);
    }

    #[test]
    fn recency_reorders_after_threshold() {
        let mut old = item("old", vec![1.0, 0.0]);
        old.timestamp = Some("2020-01-01T00:00:00Z".parse().unwrap());
        let mut new = item("new", vec![0.9, 0.43589]);
        new.timestamp = Some("2024-01-01T00:00:00Z".parse().unwrap());
        let kb = KnowledgeBase::build(vec![old, new]).unwrap();
        let q = Embedding::unit(vec![1.0, 0.0]);
        let mut cfg = RetrievalConfig::default();
        let plain = retrieve(&kb, Some(&q), None, &cfg, None).unwrap();
        assert_eq!(plain[0].id, "old");
        cfg.recency_half_life = Some(30.0);
        let decayed = retrieve(&kb, Some(&q), None, &cfg, None).unwrap();
        assert_eq!(decayed[0].id, "new");
    }

    fn fixture_backend() -> MockBackend {
        MockBackend::new(MockFixtures::default(), 5, 64)
    }

    #[test]
    fn ingest_skips_a_malformed_line_under_the_cap() {
        let mut lines: Vec<String> = (0..150)
            .map(|i| format!(r#"{{"id":"kb-{i}","text":"snippet number {i}","source_tag":"corpus"}}"#))
            .collect();
        lines.insert(10, r#"{"id":"kb-x"}"#.to_string());
        let report = ingest_reader(lines.join("\n").as_bytes(), &fixture_backend()).unwrap();
        assert_eq!(report.items.len(), 150);
        assert_eq!(report.malformed.len(), 1);
        assert_eq!(report.malformed[0].0, 11);
        for it in &report.items {
            assert!((it.embedding.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn ingest_aborts_above_one_percent() {
        // 2 malformed of 100 records is 2%
        let mut lines: Vec<String> = (0..98)
            .map(|i| format!(r#"{{"id":"kb-{i}","text":"snippet {i}"}}"#))
            .collect();
        lines.push("not json".into());
        lines.push(r#"{"text":"no id"}"#.into());
        assert_eq!(
            ingest_reader(lines.join("\n").as_bytes(), &fixture_backend()),
            Err(RetrievalError::TooManyMalformed { malformed: 2, total: 100 })
        );
    }

    #[test]
    fn ingest_missing_file() {
        let err = kb_ingest(Path::new("/nonexistent/kb.jsonl"), &fixture_backend()).unwrap_err();
        assert!(matches!(err, RetrievalError::FileNotFound(_)));
    }

    fn oracle(kb: &KnowledgeBase, q: &Embedding, qi: &Embedding, cfg: &RetrievalConfig) -> Vec<String> {
        let mut all: Vec<EvidenceItem> = kb
            .items()
            .iter()
            .filter_map(|it| {
                let s = score_item(Some(q), Some(qi), &it.embedding, cfg.beta).unwrap();
                (s >= cfg.theta_min).then(|| {
                    let mut c = it.clone();
                    c.score = Some(s);
                    c
                })
            })
            .collect();
        all.sort_by(rank_order);
        all.truncate(cfg.top_k);
        all.into_iter().map(|i| i.id).collect()
    }

    proptest! {
        #[test]
        fn ranking_matches_full_sort(n in 0usize..120, k in 1usize..12, beta in 0.0f64..=1.0, seed in 0u64..1000) {
            let items: Vec<EvidenceItem> = (0..n)
                .map(|i| {
                    let e = sparse_hash_embedding(&format!("w{} w{} w{}", i % 7, i % 11, (i * seed as usize) % 13), 32, seed).unwrap();
                    EvidenceItem::new_unscored(format!("kb-{i:03}"), "x", e, None, EvidenceSource::Kb)
                })
                .collect();
            let kb = KnowledgeBase::build(items).unwrap();
            let q = sparse_hash_embedding("w1 w2 w3", 32, seed).unwrap();
            let qi = sparse_hash_embedding("w4 w5", 32, seed).unwrap();
            let cfg = RetrievalConfig { beta, top_k: k, theta_min: -0.2, recency_half_life: None };
            let got: Vec<String> = retrieve(&kb, Some(&q), Some(&qi), &cfg, None).unwrap().into_iter().map(|i| i.id).collect();
            prop_assert_eq!(got, oracle(&kb, &q, &qi, &cfg));
        }

        #[test]
        fn beta_monotone_when_text_dominates(a in -1.0f64..1.0, b in -1.0f64..1.0, lo in 0.0f64..1.0, hi in 0.0f64..1.0) {
            let (ct, ci) = if a >= b { (a, b) } else { (b, a) };
            let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
            let e_j = Embedding::unit(vec![1.0, 0.0]);
            let e_t = unit2(ct.acos());
            let e_i = unit2(ci.acos());
            let s_lo = score_item(Some(&e_t), Some(&e_i), &e_j, lo).unwrap();
            let s_hi = score_item(Some(&e_t), Some(&e_i), &e_j, hi).unwrap();
            prop_assert!(s_hi >= s_lo - 1e-12);
        }

        #[test]
        fn returned_items_clear_threshold(theta in -0.5f64..0.8, seed in 0u64..50) {
            let items: Vec<EvidenceItem> = (0..60)
                .map(|i| {
                    let e = sparse_hash_embedding(&format!("t{} t{}", i % 5, i % 9), 16, seed).unwrap();
                    EvidenceItem::new_unscored(format!("i{i}"), "x", e, None, EvidenceSource::Kb)
                })
                .collect();
            let kb = KnowledgeBase::build(items).unwrap();
            let q = sparse_hash_embedding("t1 t2", 16, seed).unwrap();
            let cfg = RetrievalConfig { theta_min: theta, top_k: 10, ..Default::default() };
            for it in retrieve(&kb, Some(&q), None, &cfg, None).unwrap() {
                prop_assert!(it.score.unwrap() >= theta);
            }
        }
    }
}
