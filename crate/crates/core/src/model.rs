//! Domain types, the inter-agent message protocol, and the pipeline context
//! that every agent reads from and appends to.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::Embedding;
use crate::perception::{ImageCues, TextCues};
use crate::reasoning::ReasoningTrace;
use crate::retrieval::EvidenceItem;
use crate::reward::Feedback;

/// Number of topic categories.
pub const NUM_LABELS: usize = 8;

/// Tolerance used for every "sums to one" check.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("evidence reference `{0}` does not resolve against the context")]
    DanglingEvidenceRef(String),
    #[error("confidence {0} is outside [0, 1]")]
    ConfidenceOutOfRange(f64),
    #[error("bad label distribution: {0}")]
    BadDistribution(String),
    #[error("malformed context payload: {0}")]
    MalformedPayload(String),
    #[error("instance `{0}` has neither headline nor body")]
    EmptyInstance(String),
    #[error("unknown topic label `{0}`")]
    UnknownLabel(String),
    #[error("report is inconsistent: {0}")]
    BadReport(String),
}

/// The eight topic categories, in their fixed index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TopicLabel {
    Politics,
    Economy,
    Technology,
    Sports,
    Entertainment,
    Health,
    Environment,
    Science,
}

impl TopicLabel {
    pub const ALL: [TopicLabel; NUM_LABELS] = [
        TopicLabel::Politics,
        TopicLabel::Economy,
        TopicLabel::Technology,
        TopicLabel::Sports,
        TopicLabel::Entertainment,
        TopicLabel::Health,
        TopicLabel::Environment,
        TopicLabel::Science,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            TopicLabel::Politics => "Politics",
            TopicLabel::Economy => "Economy",
            TopicLabel::Technology => "Technology",
            TopicLabel::Sports => "Sports",
            TopicLabel::Entertainment => "Entertainment",
            TopicLabel::Health => "Health",
            TopicLabel::Environment => "Environment",
            TopicLabel::Science => "Science",
        }
    }
}

impl fmt::Display for TopicLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TopicLabel {
    type Err = ModelError;

    /// Case-insensitive match on the category name.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim();
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.name().eq_ignore_ascii_case(wanted))
            .ok_or_else(|| ModelError::UnknownLabel(s.to_string()))
    }
}

/// Reference to an image: a file path, a URI, or an inline `caption:` record.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageRef(pub String);

impl ImageRef {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// One news article.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewsInstance {
    pub id: String,
    pub headline: String,
    pub body: String,
    #[serde(default)]
    pub images: Vec<ImageRef>,
    #[serde(default, rename = "label", skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<TopicLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<DateTime<Utc>>,
}

impl NewsInstance {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.headline.trim().is_empty() && self.body.trim().is_empty() {
            return Err(ModelError::EmptyInstance(self.id.clone()));
        }
        Ok(())
    }
}

/// A probability vector over the [`NUM_LABELS`] categories.
///
/// The constructors either normalize or reject, so a value built through them
/// always sums to one within [`SIMPLEX_TOL`]. Deserialization is raw; decoded
/// values are checked by [`LabelDistribution::check`] (which
/// [`validate_message`] and [`deserialize_context`] call).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelDistribution(Vec<f64>);

impl LabelDistribution {
    /// Accepts `probs` as-is if it is already a valid distribution.
    pub fn new(probs: Vec<f64>) -> Result<Self, ModelError> {
        let d = Self(probs);
        d.check()?;
        Ok(d)
    }

    /// Normalizes non-negative scores. All-zero scores give the uniform
    /// distribution.
    pub fn from_scores(scores: &[f64]) -> Result<Self, ModelError> {
        if scores.len() != NUM_LABELS {
            return Err(ModelError::BadDistribution(format!(
                "expected {NUM_LABELS} scores, got {}",
                scores.len()
            )));
        }
        if let Some(bad) = scores.iter().find(|s| !s.is_finite() || **s < 0.0) {
            return Err(ModelError::BadDistribution(format!(
                "score {bad} is negative or non-finite"
            )));
        }
        let total: f64 = scores.iter().sum();
        if total <= 0.0 {
            return Ok(Self::uniform());
        }
        Ok(Self(scores.iter().map(|s| s / total).collect()))
    }

    pub fn uniform() -> Self {
        Self(vec![1.0 / NUM_LABELS as f64; NUM_LABELS])
    }

    pub fn one_hot(label: TopicLabel) -> Self {
        let mut p = vec![0.0; NUM_LABELS];
        p[label.index()] = 1.0;
        Self(p)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn prob(&self, label: TopicLabel) -> f64 {
        self.0[label.index()]
    }

    pub fn check(&self) -> Result<(), ModelError> {
        if self.0.len() != NUM_LABELS {
            return Err(ModelError::BadDistribution(format!(
                "length {} != {NUM_LABELS}",
                self.0.len()
            )));
        }
        if let Some(bad) = self.0.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(ModelError::BadDistribution(format!(
                "entry {bad} is negative or non-finite"
            )));
        }
        let total: f64 = self.0.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(ModelError::BadDistribution(format!("sums to {total}")));
        }
        Ok(())
    }

    /// Most probable label; ties go to the lower index.
    pub fn argmax(&self) -> TopicLabel {
        let mut best = 0;
        for (i, p) in self.0.iter().enumerate() {
            if *p > self.0[best] {
                best = i;
            }
        }
        TopicLabel::ALL[best]
    }

    /// The two largest probabilities, largest first.
    pub fn top_two(&self) -> (f64, f64) {
        let mut sorted = self.0.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        (sorted[0], sorted.get(1).copied().unwrap_or(0.0))
    }
}

/// Id of an [`EvidenceItem`] cited by an agent.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EvidenceRef(pub String);

impl EvidenceRef {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EvidenceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A rationale sentence and the evidence it cites.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitedSentence {
    pub sentence: String,
    #[serde(default)]
    pub cites: Vec<EvidenceRef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    TextPerception,
    ImagePerception,
    Retrieval,
    Reasoning,
    Fusion,
    Report,
    Reward,
}

impl AgentRole {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::TextPerception => "text_perception",
            AgentRole::ImagePerception => "image_perception",
            AgentRole::Retrieval => "retrieval",
            AgentRole::Reasoning => "reasoning",
            AgentRole::Fusion => "fusion",
            AgentRole::Report => "report",
            AgentRole::Reward => "reward",
        }
    }
}

/// The structured envelope every agent emits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMessage {
    pub sender: AgentRole,
    /// Outer refinement round the message belongs to; 0 for stage-1 agents.
    pub round: u32,
    pub prediction: Option<LabelDistribution>,
    pub evidence: Vec<EvidenceRef>,
    pub rationale: Vec<String>,
    pub confidence: f64,
}

/// Text half of the instance as the agents see it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TextView {
    pub headline: String,
    pub body: String,
}

impl TextView {
    pub fn is_empty(&self) -> bool {
        self.headline.trim().is_empty() && self.body.trim().is_empty()
    }
}

/// Shared state for one in-flight classification.
///
/// Evidence and the reasoning trace stay empty until their stages run, and the
/// message log is append-only: it can be read and pushed to, never rewritten.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PipelineContext {
    pub instance_id: String,
    pub text: TextView,
    pub images: Vec<ImageRef>,
    pub text_cues: Option<TextCues>,
    pub image_cues: Option<ImageCues>,
    pub text_embedding: Option<Embedding>,
    /// `None` is the zero-flagged image embedding (no usable images).
    pub image_embedding: Option<Embedding>,
    pub evidence: Vec<EvidenceItem>,
    pub reasoning: ReasoningTrace,
    pub feedback: Option<Feedback>,
    messages: Vec<AgentMessage>,
}

impl PipelineContext {
    pub fn for_instance(instance: &NewsInstance) -> Self {
        Self {
            instance_id: instance.id.clone(),
            text: TextView {
                headline: instance.headline.clone(),
                body: instance.body.clone(),
            },
            images: instance.images.clone(),
            ..Self::default()
        }
    }

    pub fn messages(&self) -> &[AgentMessage] {
        &self.messages
    }

    pub fn push_message(&mut self, message: AgentMessage) {
        self.messages.push(message);
    }

    /// Retrieved evidence followed by everything the reasoning agent observed,
    /// deduplicated by id (first occurrence wins).
    pub fn all_evidence(&self) -> Vec<&EvidenceItem> {
        let mut seen = BTreeSet::new();
        self.evidence
            .iter()
            .chain(self.reasoning.observed_evidence())
            .filter(|e| seen.insert(e.id.as_str()))
            .collect()
    }

    pub fn resolve(&self, r: &EvidenceRef) -> Option<&EvidenceItem> {
        self.evidence
            .iter()
            .chain(self.reasoning.observed_evidence())
            .find(|e| e.id == r.0)
    }
}

/// Gate weights `(α_T, α_I, α_K, α_R)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GateWeights(pub [f64; 4]);

impl GateWeights {
    pub fn text(&self) -> f64 {
        self.0[0]
    }
    pub fn image(&self) -> f64 {
        self.0[1]
    }
    pub fn knowledge(&self) -> f64 {
        self.0[2]
    }
    pub fn reasoning(&self) -> f64 {
        self.0[3]
    }

    pub fn on_simplex(&self) -> bool {
        let total: f64 = self.0.iter().sum();
        self.0.iter().all(|a| *a >= 0.0 && a.is_finite()) && (total - 1.0).abs() <= SIMPLEX_TOL
    }
}

/// The interpretable output of one classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionReport {
    pub predicted: TopicLabel,
    pub distribution: LabelDistribution,
    pub text_cues: Option<TextCues>,
    pub image_cues: Option<ImageCues>,
    pub cited_evidence: Vec<EvidenceRef>,
    /// Prose with `[id]` markers after each cited sentence.
    pub explanation: String,
    pub rationale: Vec<CitedSentence>,
    pub gate_weights: GateWeights,
}

impl FusionReport {
    /// Renders rationale sentences into explanation prose with citation markers.
    pub fn render_explanation(rationale: &[CitedSentence]) -> String {
        rationale
            .iter()
            .map(|s| {
                let mut line = s.sentence.trim().to_string();
                for c in &s.cites {
                    line.push_str(&format!(" [{c}]"));
                }
                line
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.distribution.check()?;
        if self.distribution.argmax() != self.predicted {
            return Err(ModelError::BadReport(format!(
                "predicted {} is not the argmax of the distribution",
                self.predicted
            )));
        }
        if !self.gate_weights.on_simplex() {
            return Err(ModelError::BadReport(format!(
                "gate weights {:?} are not on the simplex",
                self.gate_weights.0
            )));
        }
        let cited: BTreeSet<&str> = self.cited_evidence.iter().map(|r| r.as_str()).collect();
        for marker in crate::text::citation_markers(&self.explanation) {
            if !cited.contains(marker.as_str()) {
                return Err(ModelError::DanglingEvidenceRef(marker));
            }
        }
        Ok(())
    }
}

/// Checks an agent message against the protocol and the context it was
/// produced in.
pub fn validate_message(m: &AgentMessage, ctx: &PipelineContext) -> Result<(), ModelError> {
    if !(0.0..=1.0).contains(&m.confidence) || m.confidence.is_nan() {
        return Err(ModelError::ConfidenceOutOfRange(m.confidence));
    }
    if let Some(p) = &m.prediction {
        p.check()?;
    }
    for r in &m.evidence {
        if ctx.resolve(r).is_none() {
            return Err(ModelError::DanglingEvidenceRef(r.0.clone()));
        }
    }
    Ok(())
}

pub const CONTEXT_FORMAT: &str = "multipress-context";
pub const CONTEXT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ContextEnvelope {
    format: String,
    version: u32,
    context: PipelineContext,
}

/// Canonical text encoding: pretty JSON inside a versioned envelope, keys in
/// declaration order.
pub fn serialize_context(ctx: &PipelineContext) -> Vec<u8> {
    let env = ContextEnvelope {
        format: CONTEXT_FORMAT.to_string(),
        version: CONTEXT_VERSION,
        context: ctx.clone(),
    };
    let mut out = serde_json::to_vec_pretty(&env).expect("context is always serializable");
    out.push(b'\n');
    out
}

pub fn deserialize_context(bytes: &[u8]) -> Result<PipelineContext, ModelError> {
    let env: ContextEnvelope =
        serde_json::from_slice(bytes).map_err(|e| ModelError::MalformedPayload(e.to_string()))?;
    if env.format != CONTEXT_FORMAT {
        return Err(ModelError::MalformedPayload(format!(
            "unexpected format `{}`",
            env.format
        )));
    }
    if env.version != CONTEXT_VERSION {
        return Err(ModelError::MalformedPayload(format!(
            "unsupported version {}",
            env.version
        )));
    }
    for m in env.context.messages() {
        if let Some(p) = &m.prediction {
            p.check()
                .map_err(|e| ModelError::MalformedPayload(e.to_string()))?;
        }
    }
    Ok(env.context)
}
