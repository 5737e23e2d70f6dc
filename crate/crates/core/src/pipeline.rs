//! The three-stage orchestrator with ablation switches.
//!
//! Stage 1 perceives text and images and retrieves knowledge. The outer loop
//! then runs passes of reason → fuse → report → reward, breaking early once the
//! reward exceeds `tau` and otherwise feeding the reward agent's directive
//! into the next pass.
//!
//! Reasoning steps are spread over the passes: after pass `t` of `P`, the
//! trace may hold at most `ceil(N·t/P)` steps. With the default pass count
//! `P = N` this is one step per pass; with `reason_once` all `N` steps run in
//! the first pass.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{Backend, CallLedger, LedgeredBackend};
use crate::fusion::{
    channel_vectors, fuse, gate_weights, generate_report, FusionError, GateMatrix, GateMode, GateParams,
    Reliability, DEFAULT_GATE_GAIN,
};
use crate::model::{
    validate_message, AgentMessage, AgentRole, EvidenceRef, FusionReport, ModelError, NewsInstance,
    PipelineContext, TextView, TopicLabel,
};
use crate::perception::{perceive_image, perceive_text, PerceptionError};
use crate::reasoning::{advance_reasoning, ReasoningBudget, ReasoningError, ReasoningTrace};
use crate::retrieval::{retrieve, KnowledgeBase, RetrievalConfig, RetrievalError};
use crate::reward::{make_feedback, score, RewardBreakdown, RewardConfig, RewardError, RewardInputs};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("protocol violation: {0}")]
    Protocol(#[from] ModelError),
}

impl From<ReasoningError> for PipelineError {
    fn from(e: ReasoningError) -> Self {
        PipelineError::Config(e.to_string())
    }
}

impl From<RewardError> for PipelineError {
    fn from(e: RewardError) -> Self {
        PipelineError::Config(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    #[default]
    Both,
    TextOnly,
    ImageOnly,
}

/// Gate configuration as it appears in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateConfig {
    pub mode: GateMode,
    pub gain: f64,
    /// Weight matrix for the learned mode.
    pub learned_path: Option<PathBuf>,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            mode: GateMode::ReliabilityHeuristic,
            gain: DEFAULT_GATE_GAIN,
            learned_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub enable_rag: bool,
    pub enable_reasoning: bool,
    pub enable_gating: bool,
    pub enable_reward_loop: bool,
    pub modality: Modality,
    pub budget: ReasoningBudget,
    pub retrieval: RetrievalConfig,
    /// Reward threshold for the early break.
    pub tau: f64,
    pub reward: RewardConfig,
    pub gate: GateConfig,
    /// Refinement passes after the first; `None` means `N − 1`.
    pub refinements: Option<u32>,
    /// Run every reasoning step in the first pass.
    pub reason_once: bool,
    pub seed: u64,
    /// Largest tolerated fraction of failed instances in a batch.
    pub failure_cap: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            enable_rag: true,
            enable_reasoning: true,
            enable_gating: true,
            enable_reward_loop: true,
            modality: Modality::Both,
            budget: ReasoningBudget::default(),
            retrieval: RetrievalConfig::default(),
            tau: 0.85,
            reward: RewardConfig::default(),
            gate: GateConfig::default(),
            refinements: None,
            reason_once: false,
            seed: 0,
            failure_cap: 0.05,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.budget.validate()?;
        self.retrieval.validate()?;
        self.reward.validate()?;
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(PipelineError::Config(format!("tau {} outside (0, 1)", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.failure_cap) {
            return Err(PipelineError::Config(format!(
                "failure cap {} outside [0, 1]",
                self.failure_cap
            )));
        }
        if !(self.gate.gain.is_finite() && self.gate.gain >= 0.0) {
            return Err(PipelineError::Config("gate gain must be non-negative".into()));
        }
        Ok(())
    }

    /// Reasoning iterations actually available (0 when reasoning is off).
    pub fn iterations(&self) -> u32 {
        if self.enable_reasoning {
            self.budget.max_iterations
        } else {
            0
        }
    }

    /// Number of reason → fuse → report → reward passes.
    pub fn passes(&self) -> u32 {
        if !self.enable_reward_loop {
            return 1;
        }
        1 + self
            .refinements
            .unwrap_or(self.iterations().saturating_sub(1))
    }

    /// Cumulative reasoning-step allowance after pass `t` (1-based).
    pub fn step_allowance(&self, t: u32) -> u32 {
        let n = self.iterations();
        if self.reason_once {
            return n;
        }
        let p = self.passes();
        (n * t).div_ceil(p)
    }

    pub fn gate_mode(&self) -> GateMode {
        if self.enable_gating {
            self.gate.mode
        } else {
            GateMode::FixedEqual
        }
    }

    /// Upper bound on chat and search calls for one instance: perception,
    /// `N·(1 + M)` reasoning calls, a report per pass, each chat possibly
    /// re-asked once. Retrieval is local and embeddings are not counted.
    pub fn call_bound(&self, images: usize) -> usize {
        let n = self.iterations() as usize;
        let m = self.budget.max_searches as usize;
        let perception = match self.modality {
            Modality::Both => 1 + images,
            Modality::TextOnly => 1,
            Modality::ImageOnly => images,
        };
        2 * perception + self.retrieval.top_k + 2 * n * (1 + m) + 2 * self.passes() as usize
    }
}

/// Wall-clock time spent per stage.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageTiming {
    pub perception: Duration,
    pub retrieval: Duration,
    pub reasoning: Duration,
    pub fusion: Duration,
    pub report: Duration,
    pub reward: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub instance_id: String,
    pub predicted: TopicLabel,
    pub report: FusionReport,
    pub reward_history: Vec<RewardBreakdown>,
    pub iterations_used: u32,
    pub trace: ReasoningTrace,
    pub context: PipelineContext,
    pub ledger: CallLedger,
    #[serde(skip)]
    pub timing: StageTiming,
}

/// An instance that could not be classified, with whatever context it built.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceFailure {
    pub instance_id: String,
    pub error: String,
    pub context: PipelineContext,
    pub ledger: CallLedger,
}

pub type InstanceOutcome = Result<ClassificationResult, Box<InstanceFailure>>;

/// Per-instance outcomes in input order.
#[derive(Debug, Clone, Default)]
pub struct BatchOutcome {
    pub outcomes: Vec<InstanceOutcome>,
}

impl BatchOutcome {
    pub fn results(&self) -> impl Iterator<Item = &ClassificationResult> {
        self.outcomes.iter().filter_map(|o| o.as_ref().ok())
    }

    pub fn failures(&self) -> impl Iterator<Item = &InstanceFailure> {
        self.outcomes.iter().filter_map(|o| o.as_ref().err().map(|b| b.as_ref()))
    }

    pub fn failure_rate(&self) -> f64 {
        if self.outcomes.is_empty() {
            0.0
        } else {
            self.failures().count() as f64 / self.outcomes.len() as f64
        }
    }
}

/// Read-only classification engine, shared across worker threads.
pub struct Pipeline<'a> {
    backend: &'a dyn Backend,
    kb: &'a KnowledgeBase,
    cfg: PipelineConfig,
    gate: GateParams,
}

impl<'a> Pipeline<'a> {
    pub fn new(backend: &'a dyn Backend, kb: &'a KnowledgeBase, cfg: PipelineConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let mut gate = GateParams::new(cfg.gate_mode());
        gate.gain = cfg.gate.gain;
        if gate.mode == GateMode::LearnedFile {
            let path = cfg
                .gate
                .learned_path
                .as_ref()
                .ok_or_else(|| PipelineError::Config("learned gate mode needs a weight file".into()))?;
            let m = GateMatrix::load(path)?;
            gate.matrix = Some(m);
        }
        if !kb.is_empty() && kb.dim() != backend.embed_dim() {
            return Err(PipelineError::Config(format!(
                "knowledge base has dimension {}, backend embeds to {}",
                kb.dim(),
                backend.embed_dim()
            )));
        }
        Ok(Self { backend, kb, cfg, gate })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn classify(&self, instance: &NewsInstance) -> InstanceOutcome {
        let ledgered = LedgeredBackend::new(self.backend);
        let mut ctx = PipelineContext::for_instance(instance);
        let mut timing = StageTiming::default();
        match self.run(&ledgered, instance, &mut ctx, &mut timing) {
            Ok((report, reward_history)) => Ok(ClassificationResult {
                instance_id: instance.id.clone(),
                predicted: report.predicted,
                iterations_used: reward_history.len() as u32,
                report,
                reward_history,
                trace: ctx.reasoning.clone(),
                context: ctx,
                ledger: ledgered.ledger(),
                timing,
            }),
            Err(e) => {
                log::warn!("{}: {e}", instance.id);
                Err(Box::new(InstanceFailure {
                    instance_id: instance.id.clone(),
                    error: e.to_string(),
                    context: ctx,
                    ledger: ledgered.ledger(),
                }))
            }
        }
    }

    /// Classifies every instance on a pool of `parallelism` workers. Outcomes
    /// keep input order.
    pub fn classify_batch(&self, instances: &[NewsInstance], parallelism: usize) -> BatchOutcome {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism.max(1))
            .build()
            .expect("thread pool construction");
        let outcomes = pool.install(|| instances.par_iter().map(|i| self.classify(i)).collect());
        BatchOutcome { outcomes }
    }

    fn push(ctx: &mut PipelineContext, m: AgentMessage) -> Result<(), PipelineError> {
        validate_message(&m, ctx)?;
        ctx.push_message(m);
        Ok(())
    }

    fn run(
        &self,
        backend: &dyn Backend,
        instance: &NewsInstance,
        ctx: &mut PipelineContext,
        timing: &mut StageTiming,
    ) -> Result<(FusionReport, Vec<RewardBreakdown>), PipelineError> {
        instance.validate()?;
        let cfg = &self.cfg;

        // Stage 1: perception
        let start = Instant::now();
        if cfg.modality == Modality::ImageOnly {
            ctx.text = TextView::default();
        } else {
            let (cues, e) = perceive_text(backend, &ctx.instance_id, &ctx.text)?;
            Self::push(
                ctx,
                AgentMessage {
                    sender: AgentRole::TextPerception,
                    round: 0,
                    prediction: None,
                    evidence: vec![],
                    rationale: cues.summary.clone(),
                    confidence: cues.confidence.clamp(0.0, 1.0),
                },
            )?;
            ctx.text_cues = Some(cues);
            ctx.text_embedding = Some(e);
        }
        if cfg.modality == Modality::TextOnly {
            ctx.images.clear();
        } else {
            let (cues, e) = perceive_image(backend, &ctx.instance_id, &ctx.images)?;
            if !ctx.images.is_empty() {
                Self::push(
                    ctx,
                    AgentMessage {
                        sender: AgentRole::ImagePerception,
                        round: 0,
                        prediction: None,
                        evidence: vec![],
                        rationale: cues.summary.clone(),
                        confidence: cues.confidence.clamp(0.0, 1.0),
                    },
                )?;
                ctx.image_cues = Some(cues);
            }
            ctx.image_embedding = e;
        }
        timing.perception = start.elapsed();

        // Stage 1: retrieval
        let start = Instant::now();
        if cfg.enable_rag && (ctx.text_embedding.is_some() || ctx.image_embedding.is_some()) {
            ctx.evidence = retrieve(
                self.kb,
                ctx.text_embedding.as_ref(),
                ctx.image_embedding.as_ref(),
                &cfg.retrieval,
                instance.timestamp,
            )?;
            let scores: Vec<f64> = ctx.evidence.iter().filter_map(|e| e.score).collect();
            let mean = if scores.is_empty() {
                0.0
            } else {
                scores.iter().sum::<f64>() / scores.len() as f64
            };
            let m = AgentMessage {
                sender: AgentRole::Retrieval,
                round: 0,
                prediction: None,
                evidence: ctx.evidence.iter().map(|e| EvidenceRef::new(e.id.clone())).collect(),
                rationale: vec![],
                confidence: mean.clamp(0.0, 1.0),
            };
            Self::push(ctx, m)?;
        }
        timing.retrieval = start.elapsed();

        // Stages 2 and 3: the outer loop
        let mut budget = cfg.budget;
        budget.max_iterations = cfg.iterations();
        let probe = |c: &PipelineContext| self.probe(backend, c);
        let passes = cfg.passes();
        let mut history = Vec::new();
        let mut last_report = None;
        for pass in 1..=passes {
            let start = Instant::now();
            let before = ctx.reasoning.steps.len();
            advance_reasoning(backend, ctx, &budget, cfg.tau, &probe, cfg.step_allowance(pass));
            if ctx.reasoning.steps.len() > before {
                let m = AgentMessage {
                    sender: AgentRole::Reasoning,
                    round: pass,
                    prediction: ctx.reasoning.distribution().cloned(),
                    evidence: ctx.reasoning.citations().into_values().flatten().collect(),
                    rationale: ctx.reasoning.rationale().iter().map(|s| s.sentence.clone()).collect(),
                    confidence: ctx.reasoning.cited_fraction(),
                };
                Self::push(ctx, m)?;
            }
            timing.reasoning += start.elapsed();

            let start = Instant::now();
            let channels = channel_vectors(backend, ctx)?;
            let alpha = gate_weights(&channels, &self.gate, &Reliability::from_context(ctx))?;
            let fused = fuse(&channels, &alpha)?;
            Self::push(
                ctx,
                AgentMessage {
                    sender: AgentRole::Fusion,
                    round: pass,
                    prediction: None,
                    evidence: vec![],
                    rationale: vec![format!(
                        "gate text={:.4} image={:.4} knowledge={:.4} reasoning={:.4}",
                        alpha.text(),
                        alpha.image(),
                        alpha.knowledge(),
                        alpha.reasoning()
                    )],
                    confidence: alpha.0.iter().copied().fold(0.0, f64::max),
                },
            )?;
            timing.fusion += start.elapsed();

            let start = Instant::now();
            let report = generate_report(backend, ctx, &fused, alpha, pass - 1)?;
            Self::push(
                ctx,
                AgentMessage {
                    sender: AgentRole::Report,
                    round: pass,
                    prediction: Some(report.distribution.clone()),
                    evidence: report.cited_evidence.clone(),
                    rationale: report.rationale.iter().map(|s| s.sentence.clone()).collect(),
                    confidence: report.distribution.prob(report.predicted),
                },
            )?;
            timing.report += start.elapsed();

            let start = Instant::now();
            let inputs = RewardInputs::for_report(&report, ctx);
            let breakdown = score(backend, &inputs, &cfg.reward);
            let done = breakdown.r > cfg.tau || pass == passes;
            let feedback = (!done).then(|| make_feedback(&breakdown, &inputs, pass));
            drop(inputs);
            Self::push(
                ctx,
                AgentMessage {
                    sender: AgentRole::Reward,
                    round: pass,
                    prediction: None,
                    evidence: vec![],
                    rationale: vec![match &feedback {
                        Some(f) => f.directive.clone(),
                        None => format!(
                            "r={:.4} (cls {:.4}, ground {:.4}, cons {:.4})",
                            breakdown.r, breakdown.r_cls, breakdown.r_ground, breakdown.r_cons
                        ),
                    }],
                    confidence: breakdown.r.clamp(0.0, 1.0),
                },
            )?;
            timing.reward += start.elapsed();
            history.push(breakdown);
            last_report = Some(report);
            if done {
                break;
            }
            ctx.feedback = feedback;
        }
        let report = last_report.expect("at least one pass runs");
        Ok((report, history))
    }

    /// Reward of a provisional report built from the current reasoning state.
    fn probe(&self, backend: &dyn Backend, ctx: &PipelineContext) -> f64 {
        let Some(distribution) = ctx.reasoning.distribution() else {
            return 0.0;
        };
        let inputs = RewardInputs {
            distribution,
            sentences: ctx
                .reasoning
                .rationale()
                .iter()
                .map(|s| crate::text::strip_citations(&s.sentence))
                .collect(),
            evidence: ctx.all_evidence(),
            entities: crate::reward::cue_entities(ctx),
            objects: crate::reward::cue_objects(ctx),
        };
        score(backend, &inputs, &self.cfg.reward).r
    }
}
