//! Registered structured-output schemas and the prompt payloads agents send.
//!
//! Every chat request names one [`SchemaId`]. Responses are parsed into the
//! typed `*Out` structs here and range-checked before an agent sees them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::model::{CitedSentence, ImageRef, LabelDistribution, TopicLabel, NUM_LABELS};
use crate::perception::{ImageCues, Sentiment, TextCues};
use crate::reasoning::{Action, Verdict};
use crate::retrieval::{EvidenceItem, EvidenceSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaId {
    TextPerception,
    ImagePerception,
    ReasonStep,
    Verify,
    Report,
}

impl SchemaId {
    pub const ALL: [SchemaId; 5] = [
        SchemaId::TextPerception,
        SchemaId::ImagePerception,
        SchemaId::ReasonStep,
        SchemaId::Verify,
        SchemaId::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemaId::TextPerception => "text_perception",
            SchemaId::ImagePerception => "image_perception",
            SchemaId::ReasonStep => "reason_step",
            SchemaId::Verify => "verify",
            SchemaId::Report => "report",
        }
    }

    pub fn system_prompt(self) -> &'static str {
        match self {
            SchemaId::TextPerception => {
                "You are the text perception agent of a news topic classifier. Extract named entities, \
                 topical keywords, a summary of at most three sentences, overall sentiment, and your \
                 confidence. Reply with JSON only."
            }
            SchemaId::ImagePerception => {
                "You are the image perception agent of a news topic classifier. List the visible objects \
                 with confidences, the scene, a summary of at most two sentences, and your confidence. \
                 Reply with JSON only."
            }
            SchemaId::ReasonStep => {
                "You are the online reasoning agent of a news topic classifier. Given the article cues, \
                 retrieved evidence and earlier observations, write a thought, choose actions (search, \
                 verify, or finalize), score every topic label, and give rationale sentences citing \
                 evidence ids. Reply with JSON only."
            }
            SchemaId::Verify => {
                "Verify the claim against the supplied evidence. Reply with JSON only."
            }
            SchemaId::Report => {
                "You are the report agent of a news topic classifier. Using the fused channel weights, \
                 cues, evidence and reasoning, score every topic label and write an explanation as \
                 sentences, each citing the evidence ids it relies on. Reply with JSON only."
            }
        }
    }

    /// JSON Schema document sent to HTTP backends as the response format.
    pub fn json_schema(self) -> Value {
        let scores = json!({
            "type": "object",
            "properties": TopicLabel::ALL.iter()
                .map(|l| (l.name().to_string(), json!({"type": "number", "minimum": 0})))
                .collect::<serde_json::Map<_, _>>(),
            "required": TopicLabel::ALL.iter().map(|l| l.name()).collect::<Vec<_>>(),
            "additionalProperties": false
        });
        let cited = json!({
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "sentence": {"type": "string"},
                    "cites": {"type": "array", "items": {"type": "string"}}
                },
                "required": ["sentence", "cites"],
                "additionalProperties": false
            }
        });
        match self {
            SchemaId::TextPerception => json!({
                "type": "object",
                "properties": {
                    "entities": {"type": "array", "items": {
                        "type": "object",
                        "properties": {"surface": {"type": "string"}, "kind": {"type": "string"}},
                        "required": ["surface", "kind"],
                        "additionalProperties": false
                    }},
                    "keywords": {"type": "array", "items": {"type": "string"}},
                    "summary": {"type": "array", "items": {"type": "string"}, "maxItems": 3},
                    "sentiment": {"enum": ["neg", "neu", "pos"]},
                    "confidence": {"type": "number", "minimum": 0, "maximum": 1},
                    "discourse": {"type": "array", "items": {"type": "string"}}
                },
                "required": ["entities", "keywords", "summary", "sentiment", "confidence", "discourse"],
                "additionalProperties": false
            }),
            SchemaId::ImagePerception => json!({
                "type": "object",
                "properties": {
                    "objects": {"type": "array", "items": {
                        "type": "object",
                        "properties": {
                            "name": {"type": "string"},
                            "confidence": {"type": "number", "minimum": 0, "maximum": 1}
                        },
                        "required": ["name", "confidence"],
                        "additionalProperties": false
                    }},
                    "scene": {"type": "string"},
                    "summary": {"type": "array", "items": {"type": "string"}, "maxItems": 2},
                    "confidence": {"type": "number", "minimum": 0, "maximum": 1}
                },
                "required": ["objects", "scene", "summary", "confidence"],
                "additionalProperties": false
            }),
            SchemaId::ReasonStep => json!({
                "type": "object",
                "properties": {
                    "thought": {"type": "string"},
                    "actions": {"type": "array", "items": {
                        "type": "object",
                        "properties": {
                            "type": {"enum": ["search", "verify", "finalize"]},
                            "query": {"type": "string"},
                            "claim": {"type": "string"}
                        },
                        "required": ["type"]
                    }},
                    "scores": scores,
                    "rationale": cited
                },
                "required": ["thought", "actions", "scores", "rationale"],
                "additionalProperties": false
            }),
            SchemaId::Verify => json!({
                "type": "object",
                "properties": {
                    "verdict": {"enum": ["supported", "refuted", "unverifiable"]},
                    "confidence": {"type": "number", "minimum": 0, "maximum": 1},
                    "cites": {"type": "array", "items": {"type": "string"}}
                },
                "required": ["verdict", "confidence", "cites"],
                "additionalProperties": false
            }),
            SchemaId::Report => json!({
                "type": "object",
                "properties": {"scores": scores, "explanation": cited},
                "required": ["scores", "explanation"],
                "additionalProperties": false
            }),
        }
    }

    /// Parses and range-checks a response value.
    pub fn validate(self, value: &Value) -> Result<(), String> {
        match self {
            SchemaId::TextPerception => {
                let out: TextPerceptionOut = typed(value)?;
                unit_interval("confidence", out.confidence)?;
                if out.summary.len() > 3 {
                    return Err(format!("summary has {} sentences (max 3)", out.summary.len()));
                }
            }
            SchemaId::ImagePerception => {
                let out: ImagePerceptionOut = typed(value)?;
                unit_interval("confidence", out.confidence)?;
                for o in &out.objects {
                    unit_interval(&format!("confidence of `{}`", o.name), o.confidence)?;
                }
                if out.summary.len() > 2 {
                    return Err(format!("summary has {} sentences (max 2)", out.summary.len()));
                }
            }
            SchemaId::ReasonStep => {
                let out: ReasonStepOut = typed(value)?;
                scores_to_distribution(&out.scores)?;
            }
            SchemaId::Verify => {
                let out: VerifyOut = typed(value)?;
                unit_interval("confidence", out.confidence)?;
            }
            SchemaId::Report => {
                let out: ReportOut = typed(value)?;
                scores_to_distribution(&out.scores)?;
                if out.explanation.is_empty() {
                    return Err("explanation is empty".into());
                }
            }
        }
        Ok(())
    }
}

fn typed<T: serde::de::DeserializeOwned>(value: &Value) -> Result<T, String> {
    serde_json::from_value(value.clone()).map_err(|e| e.to_string())
}

fn unit_interval(what: &str, x: f64) -> Result<(), String> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(format!("{what} {x} outside [0, 1]"))
    }
}

/// Normalizes per-label scores into a distribution. Labels missing from the
/// map score zero; unknown label names are a violation.
pub fn scores_to_distribution(scores: &BTreeMap<String, f64>) -> Result<LabelDistribution, String> {
    let mut v = vec![0.0; NUM_LABELS];
    for (name, s) in scores {
        let label: TopicLabel = name.parse().map_err(|e: crate::model::ModelError| e.to_string())?;
        v[label.index()] = *s;
    }
    LabelDistribution::from_scores(&v).map_err(|e| e.to_string())
}

pub fn distribution_to_scores(d: &LabelDistribution) -> BTreeMap<String, f64> {
    TopicLabel::ALL
        .iter()
        .map(|l| (l.name().to_string(), d.prob(*l)))
        .collect()
}

// ---------------------------------------------------------------------------
// Response payloads
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityOut {
    pub surface: String,
    #[serde(default = "default_entity_kind")]
    pub kind: String,
}

fn default_entity_kind() -> String {
    "name".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextPerceptionOut {
    pub entities: Vec<EntityOut>,
    pub keywords: Vec<String>,
    pub summary: Vec<String>,
    pub sentiment: Sentiment,
    pub confidence: f64,
    #[serde(default)]
    pub discourse: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectOut {
    pub name: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePerceptionOut {
    pub objects: Vec<ObjectOut>,
    pub scene: String,
    pub summary: Vec<String>,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonStepOut {
    pub thought: String,
    pub actions: Vec<Action>,
    pub scores: BTreeMap<String, f64>,
    #[serde(default)]
    pub rationale: Vec<CitedSentence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOut {
    pub verdict: Verdict,
    pub confidence: f64,
    #[serde(default)]
    pub cites: Vec<crate::model::EvidenceRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportOut {
    pub scores: BTreeMap<String, f64>,
    pub explanation: Vec<CitedSentence>,
}

// ---------------------------------------------------------------------------
// Prompt payloads
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptEvidence {
    pub id: String,
    pub text: String,
    pub score: Option<f64>,
    pub source: EvidenceSource,
}

impl From<&EvidenceItem> for PromptEvidence {
    fn from(e: &EvidenceItem) -> Self {
        Self {
            id: e.id.clone(),
            text: e.text.clone(),
            score: e.score,
            source: e.source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextPerceptionPrompt {
    pub instance_id: String,
    pub headline: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePerceptionPrompt {
    pub instance_id: String,
    pub index: usize,
    pub image: ImageRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackPrompt {
    pub round: u32,
    pub weakest: String,
    pub directive: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptStep {
    pub t: u32,
    pub thought: String,
    pub actions: Vec<Action>,
    pub observed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonStepPrompt {
    pub instance_id: String,
    pub step: u32,
    pub max_actions: usize,
    pub headline: String,
    pub text_cues: Option<TextCues>,
    pub image_cues: Option<ImageCues>,
    pub evidence: Vec<PromptEvidence>,
    pub observations: Vec<PromptEvidence>,
    pub previous_steps: Vec<PromptStep>,
    pub feedback: Option<FeedbackPrompt>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyPrompt {
    pub instance_id: String,
    pub claim: String,
    pub evidence: Vec<PromptEvidence>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelWeightsPrompt {
    pub text: f64,
    pub image: f64,
    pub knowledge: f64,
    pub reasoning: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportPrompt {
    pub instance_id: String,
    pub round: u32,
    pub headline: String,
    pub text_cues: Option<TextCues>,
    pub image_cues: Option<ImageCues>,
    pub gate: ChannelWeightsPrompt,
    /// Cue strings whose embeddings lie closest to the fused vector.
    pub nearest_cues: Vec<String>,
    pub evidence: Vec<PromptEvidence>,
    pub observations: Vec<PromptEvidence>,
    pub reasoning_rationale: Vec<CitedSentence>,
    pub feedback: Option<FeedbackPrompt>,
}
