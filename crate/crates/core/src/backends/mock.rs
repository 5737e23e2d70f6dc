//! Deterministic scripted backend.
//!
//! Every response is a pure function of the request and the seed. Agents'
//! prompts are structured JSON, so the mock decodes them and answers with a
//! small rule set driven by the topic [`lexicon`](super::lexicon); fixture
//! files override or steer those rules per instance.
//!
//! # Fixture file
//!
//! Line-delimited JSON. The first record is a header
//! `{"kind":"header","format":"multipress-mock-fixtures","version":1}`; the
//! rest are tagged by `kind`:
//!
//! - `script` `{role, instance, step?, response, retry_response?}`: the chat
//!   reply for `role` (a schema name) on `instance`. `step` selects the
//!   reasoning step, image index, or report round; omitted matches any. A
//!   string `response` is sent verbatim, anything else as JSON.
//!   `retry_response` answers the re-ask after a rejected reply.
//! - `bias` `{instance, label, stubborn_rounds}`: the report agent favours
//!   `label` with an unsupported explanation until it has received feedback
//!   for round `stubborn_rounds`.
//! - `web_doc` `{id, text, timestamp?}`: a document in the search corpus.
//! - `verdict` `{claim, verdict}`: the answer to a verification request.
//! - `fail` `{instance, role?}`: chat calls for the instance (optionally only
//!   for one role) fail with a transport error.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::lexicon;
use super::schema::{
    distribution_to_scores, ImagePerceptionPrompt, PromptEvidence, ReasonStepPrompt, ReportPrompt,
    TextPerceptionPrompt, VerifyPrompt,
};
use super::{sparse_hash_embedding, Backend, BackendError, ChatRequest, EmbedInput, Embedding, SchemaId, REASK_PREFIX};
use crate::model::{CitedSentence, EvidenceRef, ImageRef, LabelDistribution, TopicLabel, NUM_LABELS};
use crate::perception::{ImageCues, TextCues};
use crate::reasoning::Verdict;
use crate::retrieval::{EvidenceItem, EvidenceSource};
use crate::text;

pub const MOCK_FIXTURE_FORMAT: &str = "multipress-mock-fixtures";
pub const MOCK_FIXTURE_VERSION: u32 = 1;

/// Sharpness of the mock's score distributions: scores are `exp(κ·s)` for a
/// vote share `s ∈ [0, 1]`.
const KAPPA: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub role: SchemaId,
    pub instance: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<u32>,
    pub response: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry_response: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBias {
    pub instance: String,
    pub label: TopicLabel,
    pub stubborn_rounds: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WebDoc {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictEntry {
    pub claim: String,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailEntry {
    pub instance: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<SchemaId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum FixtureRecord {
    Header { format: String, version: u32 },
    Script(ScriptEntry),
    Bias(ReportBias),
    WebDoc(WebDoc),
    Verdict(VerdictEntry),
    Fail(FailEntry),
}

/// Contents of a fixture file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MockFixtures {
    pub scripts: Vec<ScriptEntry>,
    pub biases: Vec<ReportBias>,
    pub web_docs: Vec<WebDoc>,
    pub verdicts: Vec<VerdictEntry>,
    pub failures: Vec<FailEntry>,
}

impl MockFixtures {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let file = std::fs::File::open(path)
            .map_err(|e| BackendError::Config(format!("cannot open fixtures {}: {e}", path.display())))?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    pub fn from_reader(reader: impl BufRead) -> Result<Self, BackendError> {
        let mut out = Self::default();
        let mut header_seen = false;
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| BackendError::Config(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: FixtureRecord = serde_json::from_str(&line)
                .map_err(|e| BackendError::Config(format!("fixture line {}: {e}", i + 1)))?;
            match rec {
                FixtureRecord::Header { format, version } => {
                    if format != MOCK_FIXTURE_FORMAT || version != MOCK_FIXTURE_VERSION {
                        return Err(BackendError::Config(format!(
                            "unsupported fixture format {format} v{version}"
                        )));
                    }
                    header_seen = true;
                }
                _ if !header_seen => {
                    return Err(BackendError::Config("fixture file must start with a header".into()))
                }
                FixtureRecord::Script(s) => out.scripts.push(s),
                FixtureRecord::Bias(b) => out.biases.push(b),
                FixtureRecord::WebDoc(d) => out.web_docs.push(d),
                FixtureRecord::Verdict(v) => out.verdicts.push(v),
                FixtureRecord::Fail(f) => out.failures.push(f),
            }
        }
        Ok(out)
    }

    /// Serializes to the line-delimited file format, header first.
    pub fn to_jsonl(&self) -> String {
        let mut records = vec![FixtureRecord::Header {
            format: MOCK_FIXTURE_FORMAT.into(),
            version: MOCK_FIXTURE_VERSION,
        }];
        records.extend(self.scripts.iter().cloned().map(FixtureRecord::Script));
        records.extend(self.biases.iter().cloned().map(FixtureRecord::Bias));
        records.extend(self.web_docs.iter().cloned().map(FixtureRecord::WebDoc));
        records.extend(self.verdicts.iter().cloned().map(FixtureRecord::Verdict));
        records.extend(self.failures.iter().cloned().map(FixtureRecord::Fail));
        let mut out = String::new();
        for r in records {
            out.push_str(&serde_json::to_string(&r).expect("fixture records are plain data"));
            out.push('\n');
        }
        out
    }

    pub fn script(mut self, role: SchemaId, instance: &str, step: Option<u32>, response: Value) -> Self {
        self.scripts.push(ScriptEntry {
            role,
            instance: instance.into(),
            step,
            response,
            retry_response: None,
        });
        self
    }

    pub fn web_doc(mut self, id: &str, text: &str) -> Self {
        self.web_docs.push(WebDoc {
            id: id.into(),
            text: text.into(),
            timestamp: None,
        });
        self
    }
}

/// An inline caption record standing in for an image:
/// `caption:<description>|objects=name:conf,...|scene=<scene>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Caption {
    pub description: String,
    pub objects: Vec<(String, f64)>,
    pub scene: String,
}

impl Caption {
    pub const PREFIX: &'static str = "caption:";

    pub fn parse(s: &str) -> Option<Self> {
        let body = s.trim().strip_prefix(Self::PREFIX)?;
        let mut parts = body.split('|');
        let description = parts.next()?.trim().to_string();
        let mut objects = Vec::new();
        let mut scene = String::new();
        for part in parts {
            if let Some(list) = part.strip_prefix("objects=") {
                for o in list.split(',').filter(|o| !o.trim().is_empty()) {
                    let (name, conf) = o.rsplit_once(':')?;
                    let conf: f64 = conf.trim().parse().ok()?;
                    if !(0.0..=1.0).contains(&conf) {
                        return None;
                    }
                    objects.push((name.trim().to_string(), conf));
                }
            } else if let Some(s) = part.strip_prefix("scene=") {
                scene = s.trim().to_string();
            }
        }
        Some(Self {
            description,
            objects,
            scene,
        })
    }

    pub fn render(&self) -> String {
        let objects: Vec<String> = self.objects.iter().map(|(n, c)| format!("{n}:{c}")).collect();
        format!(
            "{}{}|objects={}|scene={}",
            Self::PREFIX,
            self.description,
            objects.join(","),
            self.scene
        )
    }

    /// Resolves an image reference: inline captions directly, anything else
    /// as a path to a UTF-8 caption file. Free text without a caption header
    /// becomes the description, with objects spotted from the lexicon.
    pub fn resolve(image: &ImageRef) -> Result<Self, BackendError> {
        if let Some(c) = Self::parse(image.as_str()) {
            return Ok(c);
        }
        if image.as_str().starts_with(Self::PREFIX) {
            return Err(BackendError::UnreadableImage(image.as_str().to_string()));
        }
        let unreadable = || BackendError::UnreadableImage(image.as_str().to_string());
        let bytes = std::fs::read(image.as_str()).map_err(|_| unreadable())?;
        let text = String::from_utf8(bytes).map_err(|_| unreadable())?;
        if let Some(c) = Self::parse(&text) {
            return Ok(c);
        }
        let description = text.trim().to_string();
        if description.is_empty() {
            return Err(unreadable());
        }
        let objects = lexicon::objects_in(&description)
            .into_iter()
            .map(|o| (o, 0.6))
            .collect();
        Ok(Self {
            description,
            objects,
            scene: String::new(),
        })
    }
}

/// The scripted backend. Cheap to share across threads.
#[derive(Debug, Clone)]
pub struct MockBackend {
    seed: u64,
    dim: usize,
    scripts: BTreeMap<(SchemaId, String), Vec<ScriptEntry>>,
    biases: BTreeMap<String, ReportBias>,
    corpus: Vec<EvidenceItem>,
    verdicts: BTreeMap<String, Verdict>,
    failures: Vec<FailEntry>,
}

impl MockBackend {
    pub fn new(fixtures: MockFixtures, seed: u64, dim: usize) -> Self {
        let mut scripts: BTreeMap<(SchemaId, String), Vec<ScriptEntry>> = BTreeMap::new();
        for s in fixtures.scripts {
            scripts.entry((s.role, s.instance.clone())).or_default().push(s);
        }
        let biases = fixtures
            .biases
            .into_iter()
            .map(|b| (b.instance.clone(), b))
            .collect();
        let corpus = fixtures
            .web_docs
            .into_iter()
            .filter_map(|d| {
                let e = sparse_hash_embedding(&d.text, dim, seed).ok()?;
                Some(EvidenceItem::new_unscored(d.id, d.text, e, d.timestamp, EvidenceSource::Search))
            })
            .collect();
        let verdicts = fixtures
            .verdicts
            .into_iter()
            .map(|v| (v.claim.trim().to_lowercase(), v.verdict))
            .collect();
        Self {
            seed,
            dim,
            scripts,
            biases,
            corpus,
            verdicts,
            failures: fixtures.failures,
        }
    }

    fn scripted(&self, role: SchemaId, instance: &str, step: u32, retry: bool) -> Option<String> {
        let entries = self.scripts.get(&(role, instance.to_string()))?;
        let entry = entries
            .iter()
            .find(|e| e.step == Some(step))
            .or_else(|| entries.iter().find(|e| e.step.is_none()))?;
        let value = match (&entry.retry_response, retry) {
            (Some(r), true) => r,
            _ => &entry.response,
        };
        Some(match value {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        })
    }

    fn respond(&self, schema: SchemaId, prompt: &Value, retry: bool) -> Result<String, BackendError> {
        let instance = prompt
            .get("instance_id")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        if self
            .failures
            .iter()
            .any(|f| f.instance == instance && f.role.is_none_or(|r| r == schema))
        {
            return Err(BackendError::TransportError(format!(
                "scripted failure for `{instance}`"
            )));
        }
        let bad = |e: serde_json::Error| BackendError::TransportError(format!("mock cannot decode prompt: {e}"));
        let step = match schema {
            SchemaId::ReasonStep => prompt.get("step"),
            SchemaId::ImagePerception => prompt.get("index"),
            SchemaId::Report => prompt.get("round"),
            _ => None,
        }
        .and_then(Value::as_u64)
        .unwrap_or(0) as u32;
        if let Some(s) = self.scripted(schema, &instance, step, retry) {
            return Ok(s);
        }
        let reply = match schema {
            SchemaId::TextPerception => text_perception(&serde_json::from_value(prompt.clone()).map_err(bad)?),
            SchemaId::ImagePerception => image_perception(&serde_json::from_value(prompt.clone()).map_err(bad)?)?,
            SchemaId::ReasonStep => reason_step(&serde_json::from_value(prompt.clone()).map_err(bad)?),
            SchemaId::Verify => self.verify(&serde_json::from_value(prompt.clone()).map_err(bad)?),
            SchemaId::Report => self.report(&serde_json::from_value(prompt.clone()).map_err(bad)?),
        };
        Ok(reply.to_string())
    }

    fn verify(&self, p: &VerifyPrompt) -> Value {
        if let Some(v) = self.verdicts.get(&p.claim.trim().to_lowercase()) {
            return json!({"verdict": v, "confidence": 0.9, "cites": []});
        }
        let claim: BTreeSet<String> = text::content_tokens(&p.claim).into_iter().collect();
        let mut best: Option<(f64, &str)> = None;
        for e in &p.evidence {
            let toks: BTreeSet<String> = text::content_tokens(&e.text).into_iter().collect();
            let overlap = claim.intersection(&toks).count() as f64 / claim.len().max(1) as f64;
            if best.is_none_or(|(b, _)| overlap > b) {
                best = Some((overlap, &e.id));
            }
        }
        match best {
            Some((o, id)) if o >= 0.6 => json!({"verdict": "supported", "confidence": 0.8, "cites": [id]}),
            _ => json!({"verdict": "unverifiable", "confidence": 0.5, "cites": []}),
        }
    }

    fn report(&self, p: &ReportPrompt) -> Value {
        let feedback_round = p.feedback.as_ref().map_or(0, |f| f.round);
        if let Some(b) = self.biases.get(&p.instance_id) {
            if feedback_round < b.stubborn_rounds {
                let mut s = [0.0; NUM_LABELS];
                s[b.label.index()] = 1.0;
                let d = sharpen(&s);
                let sentence = format!(
                    "The coverage reads as a {} story.",
                    b.label.name().to_lowercase()
                );
                return json!({
                    "scores": distribution_to_scores(&d),
                    "explanation": [{"sentence": sentence, "cites": []}],
                });
            }
        }
        let evidence = on_topic(p.evidence.iter(), p.text_cues.as_ref());
        let observations = on_topic(p.observations.iter(), p.text_cues.as_ref());
        let channels = [
            text_votes(p.text_cues.as_ref()),
            image_votes(p.image_cues.as_ref()),
            evidence_votes(&evidence),
            reasoning_votes(&observations, &p.reasoning_rationale),
        ];
        let alpha = [p.gate.text, p.gate.image, p.gate.knowledge, p.gate.reasoning];
        let mut s = [0.0; NUM_LABELS];
        for (a, v) in alpha.iter().zip(&channels) {
            let v = share(v);
            for l in 0..NUM_LABELS {
                s[l] += a * v[l];
            }
        }
        let d = sharpen(&s);
        let predicted = d.argmax();
        let explanation = supporting_sentences(
            evidence.iter().chain(&observations),
            predicted,
            || {
                let strongest = (0..4)
                    .max_by(|a, b| {
                        (alpha[*a] * share(&channels[*a])[predicted.index()])
                            .total_cmp(&(alpha[*b] * share(&channels[*b])[predicted.index()]))
                            .then(b.cmp(a))
                    })
                    .unwrap_or(0);
                let channel = ["text", "image", "retrieved", "reasoning"][strongest];
                format!("The {channel} cues point to {}.", predicted.name().to_lowercase())
            },
        );
        json!({"scores": distribution_to_scores(&d), "explanation": explanation})
    }

    fn search(&self, query: &str, limit: usize) -> Vec<EvidenceItem> {
        let q: BTreeSet<String> = text::content_tokens(query).into_iter().collect();
        if q.is_empty() {
            return Vec::new();
        }
        let mut hits: Vec<(usize, &EvidenceItem)> = self
            .corpus
            .iter()
            .filter_map(|d| {
                let toks: BTreeSet<String> = text::content_tokens(&d.text).into_iter().collect();
                let n = q.intersection(&toks).count();
                (n > 0).then_some((n, d))
            })
            .collect();
        hits.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.id.cmp(&b.1.id)));
        hits.into_iter()
            .take(limit)
            .map(|(n, d)| {
                let mut item = d.clone();
                item.score = Some(n as f64 / q.len() as f64);
                item
            })
            .collect()
    }
}

impl Backend for MockBackend {
    fn complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let (body, retry) = match req.user.split_once(REASK_PREFIX) {
            Some((b, _)) => (b, true),
            None => (req.user.as_str(), false),
        };
        let prompt: Value = serde_json::from_str(body)
            .map_err(|e| BackendError::TransportError(format!("mock expects a JSON prompt: {e}")))?;
        self.respond(req.response_schema, &prompt, retry)
    }

    fn embed(&self, input: &EmbedInput) -> Result<Embedding, BackendError> {
        match input {
            EmbedInput::Text(t) => sparse_hash_embedding(t, self.dim, self.seed),
            EmbedInput::Image(r) => {
                let c = Caption::resolve(r)?;
                sparse_hash_embedding(&c.description, self.dim, self.seed)
            }
        }
    }

    fn web_search(&self, query: &str, limit: usize) -> Result<Vec<EvidenceItem>, BackendError> {
        Ok(self.search(query, limit))
    }

    fn embed_dim(&self) -> usize {
        self.dim
    }
}

/// `exp(κ·s)` normalized; all-equal shares give the uniform distribution.
fn sharpen(s: &[f64; NUM_LABELS]) -> LabelDistribution {
    let scores: Vec<f64> = s.iter().map(|x| (KAPPA * x).exp()).collect();
    LabelDistribution::from_scores(&scores).expect("exp scores are positive and finite")
}

/// Normalizes a vote vector to shares summing to 1 (zero stays zero).
fn share(v: &[f64; NUM_LABELS]) -> [f64; NUM_LABELS] {
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        v.map(|x| x / total)
    } else {
        [0.0; NUM_LABELS]
    }
}

fn text_votes(cues: Option<&TextCues>) -> [f64; NUM_LABELS] {
    let mut v = [0.0; NUM_LABELS];
    let Some(c) = cues else { return v };
    for k in &c.keywords {
        if let Some(l) = lexicon::keyword_label(k) {
            v[l.index()] += 1.0;
        }
    }
    for e in c.entities.iter().filter(|e| e.kind == "object") {
        if let Some(l) = lexicon::object_label(&e.normalized) {
            v[l.index()] += 1.0;
        }
    }
    v
}

fn image_votes(cues: Option<&ImageCues>) -> [f64; NUM_LABELS] {
    let mut v = [0.0; NUM_LABELS];
    let Some(c) = cues else { return v };
    for o in &c.objects {
        if let Some(l) = lexicon::object_label(&o.name) {
            v[l.index()] += o.confidence;
        }
    }
    v
}

/// Each item contributes its normalized lexicon votes weighted by its score.
fn evidence_votes(items: &[PromptEvidence]) -> [f64; NUM_LABELS] {
    let mut v = [0.0; NUM_LABELS];
    for item in items {
        let w = item.score.unwrap_or(1.0).max(0.0);
        let s = share(&lexicon::votes(&item.text));
        for l in 0..NUM_LABELS {
            v[l] += w * s[l];
        }
    }
    v
}

/// Observed items plus the cited sentences of the reasoning rationale.
fn reasoning_votes(observations: &[PromptEvidence], rationale: &[CitedSentence]) -> [f64; NUM_LABELS] {
    let mut v = evidence_votes(observations);
    for s in rationale.iter().filter(|s| !s.cites.is_empty()) {
        let share = share(&lexicon::votes(&s.sentence));
        for l in 0..NUM_LABELS {
            v[l] += share[l];
        }
    }
    v
}

/// Items mentioning at least one named entity of the article. Without named
/// entities every item is kept.
fn on_topic<'a>(
    items: impl Iterator<Item = &'a PromptEvidence>,
    cues: Option<&TextCues>,
) -> Vec<PromptEvidence> {
    let names: Vec<Vec<String>> = cues
        .iter()
        .flat_map(|c| &c.entities)
        .filter(|e| e.kind == "name")
        .map(|e| text::content_tokens(&e.surface))
        .filter(|t| !t.is_empty())
        .collect();
    items
        .filter(|e| {
            if names.is_empty() {
                return true;
            }
            let toks: BTreeSet<String> = text::content_tokens(&e.text).into_iter().collect();
            names.iter().any(|n| n.iter().all(|t| toks.contains(t)))
        })
        .cloned()
        .collect()
}

/// Label an item's text votes for, if any (ties to the lower index).
fn item_label(text: &str) -> Option<TopicLabel> {
    let v = lexicon::votes(text);
    if v.iter().all(|x| *x == 0.0) {
        return None;
    }
    let d = LabelDistribution::from_scores(&v).ok()?;
    Some(d.argmax())
}

/// Evidence texts voting for `label`, cited; otherwise a single uncited
/// sentence from `fallback`.
fn supporting_sentences<'a>(
    items: impl Iterator<Item = &'a PromptEvidence>,
    label: TopicLabel,
    fallback: impl FnOnce() -> String,
) -> Vec<CitedSentence> {
    let mut seen = BTreeSet::new();
    let out: Vec<CitedSentence> = items
        .filter(|e| seen.insert(e.id.clone()))
        .filter(|e| item_label(&e.text) == Some(label))
        .take(5)
        .map(|e| CitedSentence {
            sentence: e.text.clone(),
            cites: vec![EvidenceRef::new(e.id.clone())],
        })
        .collect();
    if out.is_empty() {
        vec![CitedSentence {
            sentence: fallback(),
            cites: vec![],
        }]
    } else {
        out
    }
}

fn is_capitalized(word: &str) -> bool {
    word.chars().next().is_some_and(char::is_uppercase)
}

fn trim_word(w: &str) -> &str {
    w.trim_matches(|c: char| !c.is_alphanumeric())
}

const STOP_LEADERS: &[&str] = &["the", "a", "an", "in", "on", "at", "for", "and", "but", "as", "after"];

/// Capitalized name runs: two or more capitalized words anywhere, or a single
/// capitalized word that does not start its sentence.
fn name_entities(sentences: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in sentences {
        let words: Vec<&str> = s.split_whitespace().collect();
        let mut i = 0;
        while i < words.len() {
            if !is_capitalized(trim_word(words[i])) {
                i += 1;
                continue;
            }
            let start = i;
            let mut run = vec![trim_word(words[i])];
            // a trailing comma or period ends the run
            let mut open = !words[i].ends_with([',', '.', ';', ':', '!', '?']);
            i += 1;
            while open && i < words.len() && is_capitalized(trim_word(words[i])) {
                run.push(trim_word(words[i]));
                open = !words[i].ends_with([',', '.', ';', ':', '!', '?']);
                i += 1;
            }
            while run.len() > 1 && STOP_LEADERS.contains(&run[0].to_lowercase().as_str()) {
                run.remove(0);
            }
            let keep = run.len() >= 2 || (start > 0 && !STOP_LEADERS.contains(&run[0].to_lowercase().as_str()));
            let surface = run.join(" ");
            if keep && !surface.is_empty() && !out.contains(&surface) {
                out.push(surface);
            }
        }
    }
    out
}

const POSITIVE: &[&str] = &["wins", "win", "record", "growth", "celebrates", "success", "praised", "boost"];
const NEGATIVE: &[&str] = &["crisis", "falls", "loss", "dies", "fears", "collapse", "warns", "decline"];

fn text_perception(p: &TextPerceptionPrompt) -> Value {
    let mut sentences = text::split_sentences(&p.headline);
    let body_sentences = text::split_sentences(&p.body);
    sentences.extend(body_sentences.iter().cloned());
    let full = format!("{}\n{}", p.headline, p.body);

    let mut entities: Vec<Value> = name_entities(&sentences)
        .into_iter()
        .map(|s| json!({"surface": s, "kind": "name"}))
        .collect();
    for o in lexicon::objects_in(&full) {
        entities.push(json!({"surface": o, "kind": "object"}));
    }
    let keywords = lexicon::keywords_in(&full);
    let summary: Vec<String> = if body_sentences.is_empty() {
        vec![p.headline.trim().to_string()]
    } else {
        body_sentences.into_iter().take(2).collect()
    };
    let toks = text::tokens(&full);
    let pos = toks.iter().filter(|t| POSITIVE.contains(&t.as_str())).count();
    let neg = toks.iter().filter(|t| NEGATIVE.contains(&t.as_str())).count();
    let sentiment = match pos.cmp(&neg) {
        std::cmp::Ordering::Greater => "pos",
        std::cmp::Ordering::Less => "neg",
        std::cmp::Ordering::Equal => "neu",
    };
    let confidence = (0.5 + 0.15 * keywords.len() as f64).min(0.95);
    json!({
        "entities": entities,
        "keywords": keywords,
        "summary": summary,
        "sentiment": sentiment,
        "confidence": confidence,
        "discourse": [],
    })
}

fn image_perception(p: &ImagePerceptionPrompt) -> Result<Value, BackendError> {
    let c = Caption::resolve(&p.image)?;
    let confidence = if c.objects.is_empty() {
        0.5
    } else {
        c.objects.iter().map(|o| o.1).sum::<f64>() / c.objects.len() as f64
    };
    let summary: Vec<String> = text::split_sentences(&c.description).into_iter().take(2).collect();
    Ok(json!({
        "objects": c.objects.iter().map(|(n, conf)| json!({"name": n, "confidence": conf})).collect::<Vec<_>>(),
        "scene": c.scene,
        "summary": summary,
        "confidence": confidence,
    }))
}

fn reason_step(p: &ReasonStepPrompt) -> Value {
    let visible = on_topic(p.evidence.iter().chain(&p.observations), p.text_cues.as_ref());
    let known: BTreeSet<String> = visible.iter().flat_map(|e| text::content_tokens(&e.text)).collect();
    let searched: BTreeSet<String> = p
        .previous_steps
        .iter()
        .flat_map(|s| &s.actions)
        .filter_map(|a| match a {
            crate::reasoning::Action::Search { query } => Some(query.to_lowercase()),
            _ => None,
        })
        .collect();
    let unresolved: Vec<String> = p
        .text_cues
        .iter()
        .flat_map(|c| &c.entities)
        .filter(|e| e.kind == "name")
        .filter(|e| !text::content_tokens(&e.surface).iter().all(|t| known.contains(t)))
        .filter(|e| !searched.contains(&e.surface.to_lowercase()))
        .map(|e| e.surface.clone())
        .collect();
    let (thought, actions) = if unresolved.is_empty() {
        (
            "The available evidence covers every named entity.".to_string(),
            vec![json!({"type": "finalize"})],
        )
    } else {
        (
            format!("Background is missing for {}.", unresolved.join(", ")),
            unresolved
                .iter()
                .map(|q| json!({"type": "search", "query": q}))
                .collect(),
        )
    };

    let mut votes = text_votes(p.text_cues.as_ref());
    let image = image_votes(p.image_cues.as_ref());
    let ev = evidence_votes(&visible);
    for l in 0..NUM_LABELS {
        votes[l] += image[l] + ev[l];
    }
    let d = sharpen(&share(&votes));
    let predicted = d.argmax();
    let rationale = supporting_sentences(visible.iter(), predicted, || {
        "No external evidence has been found yet, so the article cues decide.".to_string()
    });
    json!({
        "thought": thought,
        "actions": actions,
        "scores": distribution_to_scores(&d),
        "rationale": rationale,
    })
}
