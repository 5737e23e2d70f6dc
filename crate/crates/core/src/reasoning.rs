//! The online reasoning agent: a budgeted thought → action → observation loop
//! with stability, reward and budget stopping rules.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::schema::{
    scores_to_distribution, FeedbackPrompt, PromptEvidence, PromptStep, ReasonStepOut,
    ReasonStepPrompt, VerifyOut, VerifyPrompt,
};
use crate::backends::{chat_validated, Backend, BackendError, ChatRequest, SchemaId};
use crate::model::{CitedSentence, EvidenceRef, LabelDistribution, PipelineContext};
use crate::retrieval::EvidenceItem;

/// Results requested per search action.
pub const SEARCH_RESULTS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReasoningError {
    #[error("distributions have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("invalid reasoning budget: {0}")]
    BadBudget(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    Search { query: String },
    Verify { claim: String },
    Finalize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Supported,
    Refuted,
    Unverifiable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub claim: String,
    pub verdict: Verdict,
    pub confidence: f64,
    pub cites: Vec<EvidenceRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observation {
    Search { query: String, items: Vec<EvidenceItem> },
    Verify(Verification),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningStep {
    pub t: u32,
    pub thought: String,
    /// Executed actions; a finalize step carries only `Finalize`.
    pub actions: Vec<Action>,
    /// Actions dropped for exceeding the per-step budget or accompanying a
    /// finalize.
    pub rejected_actions: usize,
    pub observations: Vec<Observation>,
    pub distribution_after: LabelDistribution,
    pub rationale: Vec<CitedSentence>,
}

impl ReasoningStep {
    pub fn is_finalize(&self) -> bool {
        self.actions == [Action::Finalize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Stabilized,
    RewardMet,
    BudgetExhausted,
    Finalized,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub steps: Vec<ReasoningStep>,
    pub stop_reason: Option<StopReason>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ReasoningTrace {
    /// Every evidence item returned by a search action, in step order.
    pub fn observed_evidence(&self) -> impl Iterator<Item = &EvidenceItem> {
        self.steps
            .iter()
            .flat_map(|s| &s.observations)
            .filter_map(|o| match o {
                Observation::Search { items, .. } => Some(items.iter()),
                Observation::Verify(_) => None,
            })
            .flatten()
    }

    /// The rationale of the latest step.
    pub fn rationale(&self) -> &[CitedSentence] {
        self.steps.last().map_or(&[], |s| &s.rationale)
    }

    /// Rationale sentence → cited evidence ids.
    pub fn citations(&self) -> BTreeMap<String, Vec<EvidenceRef>> {
        self.rationale()
            .iter()
            .map(|s| (s.sentence.clone(), s.cites.clone()))
            .collect()
    }

    pub fn distribution(&self) -> Option<&LabelDistribution> {
        self.steps.last().map(|s| &s.distribution_after)
    }

    pub fn searched_queries(&self) -> Vec<&str> {
        self.steps
            .iter()
            .flat_map(|s| &s.actions)
            .filter_map(|a| match a {
                Action::Search { query } => Some(query.as_str()),
                _ => None,
            })
            .collect()
    }

    /// Fraction of rationale sentences carrying at least one citation.
    pub fn cited_fraction(&self) -> f64 {
        let r = self.rationale();
        if r.is_empty() {
            0.0
        } else {
            r.iter().filter(|s| !s.cites.is_empty()).count() as f64 / r.len() as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReasoningBudget {
    /// N: maximum iterations.
    pub max_iterations: u32,
    /// M: maximum search and verification actions per iteration.
    pub max_searches: u32,
    /// Total-variation threshold for the stability stop.
    pub epsilon: f64,
}

impl Default for ReasoningBudget {
    fn default() -> Self {
        Self {
            max_iterations: 3,
            max_searches: 3,
            epsilon: 0.05,
        }
    }
}

impl ReasoningBudget {
    pub fn validate(&self) -> Result<(), ReasoningError> {
        if self.max_searches < 1 {
            return Err(ReasoningError::BadBudget("max searches must be at least 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(ReasoningError::BadBudget(format!(
                "epsilon {} outside (0, 1)",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// `½ Σ |p_i − q_i|`.
pub fn tv_distance(p: &LabelDistribution, q: &LabelDistribution) -> Result<f64, ReasoningError> {
    let (a, b) = (p.probs(), q.probs());
    if a.len() != b.len() {
        return Err(ReasoningError::LengthMismatch(a.len(), b.len()));
    }
    Ok(0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

fn visible_evidence<'a>(ctx: &'a PipelineContext) -> Vec<&'a EvidenceItem> {
    ctx.all_evidence()
}

fn cites_resolve(ids: &BTreeSet<String>, cites: &[EvidenceRef]) -> Result<(), String> {
    match cites.iter().find(|c| !ids.contains(c.as_str())) {
        Some(c) => Err(format!("citation `{c}` does not resolve")),
        None => Ok(()),
    }
}

fn rationale_validator(ids: BTreeSet<String>) -> impl Fn(&serde_json::Value) -> Result<(), String> {
    move |v| {
        let out: ReasonStepOut = serde_json::from_value(v.clone()).map_err(|e| e.to_string())?;
        for s in &out.rationale {
            cites_resolve(&ids, &s.cites)?;
        }
        Ok(())
    }
}

/// One thought → action → observation iteration against the current context
/// (whose `reasoning` field holds the trace so far).
pub fn react_step(
    backend: &dyn Backend,
    ctx: &PipelineContext,
    t: u32,
    budget: &ReasoningBudget,
) -> Result<ReasoningStep, BackendError> {
    let visible = visible_evidence(ctx);
    let ids: BTreeSet<String> = visible.iter().map(|e| e.id.clone()).collect();
    let prompt = ReasonStepPrompt {
        instance_id: ctx.instance_id.clone(),
        step: t,
        max_actions: budget.max_searches as usize,
        headline: ctx.text.headline.clone(),
        text_cues: ctx.text_cues.clone(),
        image_cues: ctx.image_cues.clone(),
        evidence: ctx.evidence.iter().map(PromptEvidence::from).collect(),
        observations: ctx.reasoning.observed_evidence().map(PromptEvidence::from).collect(),
        previous_steps: ctx
            .reasoning
            .steps
            .iter()
            .map(|s| PromptStep {
                t: s.t,
                thought: s.thought.clone(),
                actions: s.actions.clone(),
                observed: s
                    .observations
                    .iter()
                    .flat_map(|o| match o {
                        Observation::Search { items, .. } => items.iter().map(|i| i.id.clone()).collect(),
                        Observation::Verify(v) => vec![format!("verify:{:?}", v.verdict).to_lowercase()],
                    })
                    .collect(),
            })
            .collect(),
        feedback: ctx.feedback.as_ref().map(|f| FeedbackPrompt {
            round: f.round,
            weakest: f.weakest.as_str().to_string(),
            directive: f.directive.clone(),
        }),
    };
    let req = ChatRequest::new(SchemaId::ReasonStep, &prompt);
    let out: ReasonStepOut = chat_validated(backend, &req, &rationale_validator(ids))?.parse()?;
    let distribution_after =
        scores_to_distribution(&out.scores).map_err(BackendError::SchemaViolation)?;

    let proposed = out.actions.len();
    let actions: Vec<Action> = if out.actions.contains(&Action::Finalize) {
        vec![Action::Finalize]
    } else {
        out.actions
            .into_iter()
            .take(budget.max_searches as usize)
            .collect()
    };
    let rejected_actions = proposed - actions.len();
    if rejected_actions > 0 {
        log::debug!("{}: step {t} dropped {rejected_actions} action(s)", ctx.instance_id);
    }

    let mut observations = Vec::new();
    let mut seen: Vec<EvidenceItem> = visible.into_iter().cloned().collect();
    for action in &actions {
        match action {
            Action::Search { query } => {
                let items = backend.web_search(query, SEARCH_RESULTS)?;
                seen.extend(items.iter().cloned());
                observations.push(Observation::Search {
                    query: query.clone(),
                    items,
                });
            }
            Action::Verify { claim } => {
                let ids: BTreeSet<String> = seen.iter().map(|e| e.id.clone()).collect();
                let prompt = VerifyPrompt {
                    instance_id: ctx.instance_id.clone(),
                    claim: claim.clone(),
                    evidence: seen.iter().map(PromptEvidence::from).collect(),
                };
                let req = ChatRequest::new(SchemaId::Verify, &prompt);
                let check = move |v: &serde_json::Value| {
                    let out: VerifyOut = serde_json::from_value(v.clone()).map_err(|e| e.to_string())?;
                    cites_resolve(&ids, &out.cites)
                };
                let out: VerifyOut = chat_validated(backend, &req, &check)?.parse()?;
                observations.push(Observation::Verify(Verification {
                    claim: claim.clone(),
                    verdict: out.verdict,
                    confidence: out.confidence,
                    cites: out.cites,
                }));
            }
            Action::Finalize => {}
        }
    }

    Ok(ReasoningStep {
        t,
        thought: out.thought,
        actions,
        rejected_actions,
        observations,
        distribution_after,
        rationale: out.rationale,
    })
}

/// Runs reasoning steps on `ctx.reasoning` until a stopping rule fires or the
/// trace holds `step_limit` steps (capped at N). Stopping when the cap is
/// below N leaves the trace open for a later call. Returns the number of steps
/// added.
///
/// `probe` scores a provisional report for the current context; the loop
/// stops with `reward_met` once it reaches `tau`.
pub fn advance_reasoning(
    backend: &dyn Backend,
    ctx: &mut PipelineContext,
    budget: &ReasoningBudget,
    tau: f64,
    probe: &dyn Fn(&PipelineContext) -> f64,
    step_limit: u32,
) -> usize {
    if ctx.reasoning.stop_reason.is_some() {
        return 0;
    }
    let n = budget.max_iterations;
    if n == 0 {
        ctx.reasoning.stop_reason = Some(StopReason::BudgetExhausted);
        return 0;
    }
    let limit = step_limit.min(n);
    let mut added = 0;
    while (ctx.reasoning.steps.len() as u32) < limit {
        let t = ctx.reasoning.steps.len() as u32 + 1;
        let step = match react_step(backend, ctx, t, budget) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("{}: reasoning step {t} failed: {e}", ctx.instance_id);
                ctx.reasoning.warnings.push(format!("step {t} failed: {e}"));
                ctx.reasoning.stop_reason = Some(StopReason::BudgetExhausted);
                return added;
            }
        };
        let previous = ctx.reasoning.distribution().cloned();
        let finalize = step.is_finalize();
        ctx.reasoning.steps.push(step);
        added += 1;
        let current = ctx.reasoning.distribution().expect("a step was just pushed");
        let stop = if finalize {
            Some(StopReason::Finalized)
        } else if t >= 2
            && previous
                .as_ref()
                .and_then(|p| tv_distance(p, current).ok())
                .is_some_and(|d| d < budget.epsilon)
        {
            Some(StopReason::Stabilized)
        } else if probe(ctx) >= tau {
            Some(StopReason::RewardMet)
        } else if t == n {
            Some(StopReason::BudgetExhausted)
        } else {
            None
        };
        if stop.is_some() {
            ctx.reasoning.stop_reason = stop;
            break;
        }
    }
    added
}

/// Runs the full loop of up to N steps and returns the resulting trace.
pub fn run_reasoning(
    backend: &dyn Backend,
    ctx: &mut PipelineContext,
    budget: &ReasoningBudget,
    tau: f64,
    probe: &dyn Fn(&PipelineContext) -> f64,
) -> ReasoningTrace {
    advance_reasoning(backend, ctx, budget, tau, probe, budget.max_iterations);
    ctx.reasoning.clone()
}
