//! Report scoring (classification margin, grounding, cross-modal consistency),
//! the weighted total reward, and feedback for the next refinement round.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{Backend, EmbedInput, Embedding};
use crate::model::{FusionReport, LabelDistribution, PipelineContext, TopicLabel};
use crate::retrieval::EvidenceItem;
use crate::text;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("reward weights {0:?} must be non-negative and sum to 1")]
    BadWeights([f64; 3]),
    #[error("threshold {0} outside (0, 1)")]
    BadThreshold(f64),
}

/// λ weights for (r_cls, r_ground, r_cons).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct RewardWeights([f64; 3]);

impl RewardWeights {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64) -> Result<Self, RewardError> {
        let w = [lambda1, lambda2, lambda3];
        let total: f64 = w.iter().sum();
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(RewardError::BadWeights(w));
        }
        Ok(Self(w))
    }

    pub fn values(&self) -> [f64; 3] {
        self.0
    }
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self([0.5, 0.3, 0.2])
    }
}

impl TryFrom<[f64; 3]> for RewardWeights {
    type Error = RewardError;
    fn try_from(w: [f64; 3]) -> Result<Self, Self::Error> {
        Self::new(w[0], w[1], w[2])
    }
}

impl From<RewardWeights> for [f64; 3] {
    fn from(w: RewardWeights) -> Self {
        w.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceMatch {
    pub sentence: usize,
    pub evidence: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityMatch {
    pub entity: String,
    pub object: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_cls: f64,
    pub r_ground: f64,
    pub r_cons: f64,
    pub r: f64,
    pub sentence_count: usize,
    pub matched_sentences: Vec<SentenceMatch>,
    pub matched_entities: Vec<EntityMatch>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Cls,
    Ground,
    Cons,
}

impl Component {
    pub fn as_str(self) -> &'static str {
        match self {
            Component::Cls => "cls",
            Component::Ground => "ground",
            Component::Cons => "cons",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub weakest: Component,
    pub directive: String,
    /// Refinement round this feedback steers; starts at 1.
    pub round: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub weights: RewardWeights,
    pub theta_ground: f64,
    pub theta_cons: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            weights: RewardWeights::default(),
            theta_ground: 0.6,
            theta_cons: 0.7,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        for t in [self.theta_ground, self.theta_cons] {
            if !(t > 0.0 && t < 1.0) {
                return Err(RewardError::BadThreshold(t));
            }
        }
        Ok(())
    }
}

/// Margin between the two largest probabilities.
pub fn reward_cls(dist: &LabelDistribution) -> f64 {
    let (p1, p2) = dist.top_two();
    (p1 - p2).clamp(0.0, 1.0)
}

/// Fraction of sentences whose best evidence cosine reaches `theta_g`.
/// `sentences[i]` is `None` when the sentence could not be embedded; such a
/// sentence never matches. Empty input scores 0.
pub fn reward_ground(
    sentences: &[Option<Embedding>],
    evidence: &[&EvidenceItem],
    theta_g: f64,
) -> (f64, Vec<SentenceMatch>) {
    if sentences.is_empty() {
        log::warn!("grounding reward on an empty rationale is 0");
        return (0.0, Vec::new());
    }
    let mut matches = Vec::new();
    for (i, s) in sentences.iter().enumerate() {
        let Some(s) = s else { continue };
        let mut best: Option<(f64, &str)> = None;
        for e in evidence {
            let Some(c) = s.cosine(&e.embedding) else { continue };
            if best.is_none_or(|(b, _)| c > b) {
                best = Some((c, &e.id));
            }
        }
        if let Some((c, id)) = best {
            if c >= theta_g {
                matches.push(SentenceMatch {
                    sentence: i,
                    evidence: id.to_string(),
                    similarity: c,
                });
            }
        }
    }
    (matches.len() as f64 / sentences.len() as f64, matches)
}

/// Greedy one-to-one matching of entities to objects. Equal normalized names
/// score 1, other pairs their embedding cosine; pairs below `theta_c` are
/// dropped. Candidates are taken by similarity descending, ties broken on the
/// lexically ordered pair so the result does not depend on which side is
/// which. Both sides empty scores 1; one side empty scores 0.
pub fn reward_cons(
    entities: &[(String, Option<Embedding>)],
    objects: &[(String, Option<Embedding>)],
    theta_c: f64,
) -> (f64, Vec<EntityMatch>) {
    match (entities.is_empty(), objects.is_empty()) {
        (true, true) => return (1.0, Vec::new()),
        (true, false) | (false, true) => return (0.0, Vec::new()),
        _ => {}
    }
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, (en, ee)) in entities.iter().enumerate() {
        for (j, (on, oe)) in objects.iter().enumerate() {
            let sim = if en == on {
                1.0
            } else {
                match (ee, oe) {
                    (Some(a), Some(b)) => a.cosine(b).unwrap_or(0.0),
                    _ => 0.0,
                }
            };
            if sim >= theta_c {
                pairs.push((sim, i, j));
            }
        }
    }
    let key = |i: usize, j: usize| {
        let (a, b) = (&entities[i].0, &objects[j].0);
        if a <= b {
            (a.clone(), b.clone())
        } else {
            (b.clone(), a.clone())
        }
    };
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0).then_with(|| key(x.1, x.2).cmp(&key(y.1, y.2))));
    let mut used_e = BTreeSet::new();
    let mut used_o = BTreeSet::new();
    let mut matches = Vec::new();
    for (sim, i, j) in pairs {
        if used_e.contains(&i) || used_o.contains(&j) {
            continue;
        }
        used_e.insert(i);
        used_o.insert(j);
        matches.push(EntityMatch {
            entity: entities[i].0.clone(),
            object: objects[j].0.clone(),
            similarity: sim,
        });
    }
    let denom = entities.len().max(objects.len()) as f64;
    (matches.len() as f64 / denom, matches)
}

/// `λ1·r_cls + λ2·r_ground + λ3·r_cons`.
pub fn total_reward(r_cls: f64, r_ground: f64, r_cons: f64, weights: &RewardWeights) -> f64 {
    let [l1, l2, l3] = weights.0;
    l1 * r_cls + l2 * r_ground + l3 * r_cons
}

/// Everything the reward needs from a report, decoupled from how it was made.
pub struct RewardInputs<'a> {
    pub distribution: &'a LabelDistribution,
    pub sentences: Vec<String>,
    pub evidence: Vec<&'a EvidenceItem>,
    pub entities: Vec<String>,
    pub objects: Vec<String>,
}

impl<'a> RewardInputs<'a> {
    /// Report explanation sentences against everything the context has seen.
    pub fn for_report(report: &'a FusionReport, ctx: &'a PipelineContext) -> Self {
        Self {
            distribution: &report.distribution,
            sentences: report
                .rationale
                .iter()
                .map(|s| text::strip_citations(&s.sentence))
                .collect(),
            evidence: ctx.all_evidence(),
            entities: cue_entities(ctx),
            objects: cue_objects(ctx),
        }
    }
}

pub fn cue_entities(ctx: &PipelineContext) -> Vec<String> {
    ctx.text_cues
        .as_ref()
        .map(|c| c.entities.iter().map(|e| e.normalized.clone()).collect())
        .unwrap_or_default()
}

pub fn cue_objects(ctx: &PipelineContext) -> Vec<String> {
    ctx.image_cues
        .as_ref()
        .map(|c| c.objects.iter().map(|o| text::normalize_entity(&o.name)).collect())
        .unwrap_or_default()
}

fn embed_text(backend: &dyn Backend, s: &str) -> Option<Embedding> {
    backend.embed(&EmbedInput::Text(s.to_string())).ok()
}

/// Scores a report. Embedding failures count as non-matches.
pub fn score(backend: &dyn Backend, inputs: &RewardInputs<'_>, cfg: &RewardConfig) -> RewardBreakdown {
    let r_cls = reward_cls(inputs.distribution);
    let sentence_vecs: Vec<Option<Embedding>> =
        inputs.sentences.iter().map(|s| embed_text(backend, s)).collect();
    let (r_ground, matched_sentences) = reward_ground(&sentence_vecs, &inputs.evidence, cfg.theta_ground);
    // entity keys use underscores; embed them as words
    let side = |names: &[String]| -> Vec<(String, Option<Embedding>)> {
        names
            .iter()
            .map(|n| (n.clone(), embed_text(backend, &n.replace('_', " "))))
            .collect()
    };
    let (r_cons, matched_entities) =
        reward_cons(&side(&inputs.entities), &side(&inputs.objects), cfg.theta_cons);
    RewardBreakdown {
        r_cls,
        r_ground,
        r_cons,
        r: total_reward(r_cls, r_ground, r_cons, &cfg.weights),
        sentence_count: inputs.sentences.len(),
        matched_sentences,
        matched_entities,
    }
}

/// Picks the weakest component (ties: cls, then ground, then cons) and writes
/// a directive naming what to fix.
pub fn make_feedback(breakdown: &RewardBreakdown, inputs: &RewardInputs<'_>, round: u32) -> Feedback {
    let comps = [
        (Component::Cls, breakdown.r_cls),
        (Component::Ground, breakdown.r_ground),
        (Component::Cons, breakdown.r_cons),
    ];
    let mut weakest = comps[0];
    for c in &comps[1..] {
        if c.1 < weakest.1 {
            weakest = *c;
        }
    }
    let directive = match weakest.0 {
        Component::Cls => {
            let probs = inputs.distribution.probs();
            let mut order: Vec<usize> = (0..probs.len()).collect();
            order.sort_by(|a, b| probs[*b].total_cmp(&probs[*a]).then(a.cmp(b)));
            let name = |i: usize| TopicLabel::from_index(i).map_or("?", |l| l.name());
            format!(
                "The topic decision is ambiguous: {} and {} differ by only {:.2}. Weigh the evidence again and commit to the best-supported topic.",
                name(order[0]),
                name(order[1]),
                breakdown.r_cls
            )
        }
        Component::Ground => {
            let matched: BTreeSet<usize> = breakdown.matched_sentences.iter().map(|m| m.sentence).collect();
            let unmatched: Vec<String> = inputs
                .sentences
                .iter()
                .enumerate()
                .filter(|(i, _)| !matched.contains(i))
                .map(|(_, s)| format!("\"{s}\""))
                .collect();
            if unmatched.is_empty() {
                "The explanation is empty. State the evidence that supports the topic and cite it.".to_string()
            } else {
                format!(
                    "These explanation sentences are not supported by any retrieved evidence: {}. Restate the explanation using cited evidence only.",
                    unmatched.join(", ")
                )
            }
        }
        Component::Cons => {
            let matched: BTreeSet<&str> = breakdown.matched_entities.iter().map(|m| m.entity.as_str()).collect();
            let unmatched: Vec<&str> = inputs
                .entities
                .iter()
                .map(String::as_str)
                .filter(|e| !matched.contains(e))
                .collect();
            format!(
                "Text entities and image objects disagree (unmatched entities: {}). Check which modality is reliable before deciding.",
                if unmatched.is_empty() { "none".to_string() } else { unmatched.join(", ") }
            )
        }
    };
    Feedback {
        weakest: weakest.0,
        directive,
        round: round.max(1),
    }
}
