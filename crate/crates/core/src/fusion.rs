//! Gated fusion of the four channels and report generation.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::schema::{
    scores_to_distribution, ChannelWeightsPrompt, FeedbackPrompt, PromptEvidence, ReportOut, ReportPrompt,
};
use crate::backends::{chat_validated, Backend, BackendError, ChatRequest, EmbedInput, Embedding, SchemaId};
use crate::model::{EvidenceRef, FusionReport, GateWeights, PipelineContext};
use crate::reasoning::StopReason;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no fusion channel is available")]
    NoChannels,
    #[error("cannot load gate weights from {path}: {reason}")]
    GateFile { path: String, reason: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

pub const CHANNELS: [&str; 4] = ["text", "image", "knowledge", "reasoning"];

/// Dense channel vectors; `None` marks an unavailable channel.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChannelVectors {
    pub channels: [Option<Embedding>; 4],
}

impl ChannelVectors {
    pub fn availability(&self) -> [bool; 4] {
        [0, 1, 2, 3].map(|c| self.channels[c].is_some())
    }

    /// Common dimension of the available channels.
    pub fn dim(&self) -> Result<usize, FusionError> {
        let dims: BTreeSet<usize> = self.channels.iter().flatten().map(Embedding::dim).collect();
        match dims.len() {
            0 => Err(FusionError::NoChannels),
            1 => Ok(*dims.iter().next().unwrap()),
            _ => Err(FusionError::ShapeMismatch(format!("channel dimensions {dims:?} differ"))),
        }
    }

    /// `[t; i; k; r]` with zeros for unavailable channels.
    pub fn concat(&self, dim: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(4 * dim);
        for ch in &self.channels {
            match ch {
                Some(e) => out.extend_from_slice(e.values()),
                None => out.extend(std::iter::repeat_n(0.0, dim)),
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum GateMode {
    LearnedFile,
    ReliabilityHeuristic,
    FixedEqual,
}

/// Row-major `4 × cols` gate matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GateMatrix {
    pub cols: usize,
    pub values: Vec<f64>,
}

impl GateMatrix {
    /// Parses the text format: a `rows cols` header line followed by
    /// whitespace-separated row-major values. Lines starting with `#` are
    /// comments.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut nums = text
            .lines()
            .filter(|l| !l.trim_start().starts_with('#'))
            .flat_map(str::split_whitespace);
        let mut header = |what: &str| -> Result<usize, String> {
            nums.next()
                .ok_or_else(|| format!("missing {what}"))?
                .parse::<usize>()
                .map_err(|e| format!("bad {what}: {e}"))
        };
        let rows = header("row count")?;
        let cols = header("column count")?;
        if rows != 4 {
            return Err(format!("gate matrix needs 4 rows, got {rows}"));
        }
        let values: Vec<f64> = nums
            .map(|t| t.parse::<f64>().map_err(|e| format!("bad value `{t}`: {e}")))
            .collect::<Result<_, _>>()?;
        if values.len() != rows * cols {
            return Err(format!("expected {} values, got {}", rows * cols, values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err("gate matrix has non-finite entries".into());
        }
        Ok(Self { cols, values })
    }

    pub fn load(path: &Path) -> Result<Self, FusionError> {
        let err = |reason: String| FusionError::GateFile {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        Self::parse(&text).map_err(err)
    }

    pub fn render(&self) -> String {
        let mut out = format!("4 {}\n", self.cols);
        for row in self.values.chunks(self.cols.max(1)) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub mode: GateMode,
    pub matrix: Option<GateMatrix>,
    /// Slope of the reliability-heuristic logits.
    pub gain: f64,
}

pub const DEFAULT_GATE_GAIN: f64 = 4.0;

impl GateParams {
    pub fn new(mode: GateMode) -> Self {
        Self {
            mode,
            matrix: None,
            gain: DEFAULT_GATE_GAIN,
        }
    }
}

/// Per-channel reliability signals in [0, 1] for the heuristic gate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Reliability(pub [f64; 4]);

impl Reliability {
    /// Text: perception confidence. Image: mean detected-object confidence.
    /// Knowledge: mean retrieval score. Reasoning: fraction of cited rationale
    /// sentences, halved when the loop ran out of budget.
    pub fn from_context(ctx: &PipelineContext) -> Self {
        let text = ctx.text_cues.as_ref().map_or(0.0, |c| c.confidence);
        let image = ctx.image_cues.as_ref().map_or(0.0, |c| c.mean_object_confidence());
        let scores: Vec<f64> = ctx.evidence.iter().filter_map(|e| e.score).collect();
        let knowledge = if scores.is_empty() {
            0.0
        } else {
            scores.iter().sum::<f64>() / scores.len() as f64
        };
        let mut reasoning = ctx.reasoning.cited_fraction();
        if ctx.reasoning.stop_reason == Some(StopReason::BudgetExhausted) {
            reasoning *= 0.5;
        }
        Self([text, image, knowledge, reasoning].map(|v| v.clamp(0.0, 1.0)))
    }
}

/// Softmax over available channels; unavailable channels get exactly 0.
pub fn masked_softmax(logits: [f64; 4], available: [bool; 4]) -> Result<GateWeights, FusionError> {
    let max = (0..4)
        .filter(|c| available[*c])
        .map(|c| logits[c])
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(FusionError::NoChannels);
    }
    let mut w = [0.0; 4];
    for c in 0..4 {
        if available[c] {
            w[c] = (logits[c] - max).exp();
        }
    }
    let total: f64 = w.iter().sum();
    Ok(GateWeights(w.map(|x| x / total)))
}

/// Gate logits for the configured mode.
pub fn gate_logits(
    ch: &ChannelVectors,
    gp: &GateParams,
    reliability: &Reliability,
) -> Result<[f64; 4], FusionError> {
    match gp.mode {
        GateMode::FixedEqual => Ok([0.0; 4]),
        GateMode::ReliabilityHeuristic => Ok(reliability.0.map(|r| gp.gain * r)),
        GateMode::LearnedFile => {
            let m = gp
                .matrix
                .as_ref()
                .ok_or_else(|| FusionError::ShapeMismatch("learned gate mode without a matrix".into()))?;
            let dim = ch.dim()?;
            let x = ch.concat(dim);
            if m.cols != x.len() {
                return Err(FusionError::ShapeMismatch(format!(
                    "gate matrix has {} columns, channels concatenate to {}",
                    m.cols,
                    x.len()
                )));
            }
            let mut z = [0.0; 4];
            for (row, zc) in m.values.chunks(m.cols).zip(z.iter_mut()) {
                *zc = row.iter().zip(&x).map(|(a, b)| a * b).sum();
            }
            Ok(z)
        }
    }
}

pub fn gate_weights(
    ch: &ChannelVectors,
    gp: &GateParams,
    reliability: &Reliability,
) -> Result<GateWeights, FusionError> {
    masked_softmax(gate_logits(ch, gp, reliability)?, ch.availability())
}

/// `F = Σ α_c ch_c`.
pub fn fuse(ch: &ChannelVectors, alpha: &GateWeights) -> Result<Vec<f64>, FusionError> {
    let dim = ch.dim()?;
    let mut f = vec![0.0; dim];
    for (c, e) in ch.channels.iter().enumerate() {
        let Some(e) = e else { continue };
        for (x, v) in f.iter_mut().zip(e.values()) {
            *x += alpha.0[c] * v;
        }
    }
    Ok(f)
}

/// Builds the four channel vectors from the context. The reasoning channel
/// embeds the concatenated rationale and is unavailable when there is none.
pub fn channel_vectors(backend: &dyn Backend, ctx: &PipelineContext) -> Result<ChannelVectors, FusionError> {
    let knowledge = Embedding::weighted_mean(
        ctx.evidence
            .iter()
            .map(|e| (e.score.unwrap_or(1.0).max(0.0), &e.embedding)),
    );
    let rationale: Vec<&str> = ctx.reasoning.rationale().iter().map(|s| s.sentence.as_str()).collect();
    let reasoning = if rationale.is_empty() {
        None
    } else {
        match backend.embed(&EmbedInput::Text(rationale.join(" "))) {
            Ok(e) => Some(e),
            Err(BackendError::EmptyContent) => None,
            Err(e) => return Err(e.into()),
        }
    };
    Ok(ChannelVectors {
        channels: [
            ctx.text_embedding.clone(),
            ctx.image_embedding.clone(),
            knowledge,
            reasoning,
        ],
    })
}

/// Up to `n` cue strings whose embeddings are closest to `fused`.
fn nearest_cues(backend: &dyn Backend, ctx: &PipelineContext, fused: &[f64], n: usize) -> Vec<String> {
    let mut cues: Vec<String> = Vec::new();
    if let Some(t) = &ctx.text_cues {
        cues.extend(t.keywords.iter().cloned());
        cues.extend(t.entities.iter().map(|e| e.surface.clone()));
    }
    if let Some(i) = &ctx.image_cues {
        cues.extend(i.objects.iter().map(|o| o.name.clone()));
    }
    let mut seen = BTreeSet::new();
    cues.retain(|c| seen.insert(c.clone()));
    cues.truncate(12);
    let mut scored: Vec<(f64, String)> = cues
        .into_iter()
        .filter_map(|c| {
            let e = backend.embed(&EmbedInput::Text(c.clone())).ok()?;
            (e.dim() == fused.len()).then(|| (e.values().iter().zip(fused).map(|(a, b)| a * b).sum(), c))
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    scored.into_iter().take(n).map(|(_, c)| c).collect()
}

/// Asks the report agent for the final structured report.
pub fn generate_report(
    backend: &dyn Backend,
    ctx: &PipelineContext,
    fused: &[f64],
    alpha: GateWeights,
    round: u32,
) -> Result<FusionReport, FusionError> {
    let ids: BTreeSet<String> = ctx.all_evidence().iter().map(|e| e.id.clone()).collect();
    let prompt = ReportPrompt {
        instance_id: ctx.instance_id.clone(),
        round,
        headline: ctx.text.headline.clone(),
        text_cues: ctx.text_cues.clone(),
        image_cues: ctx.image_cues.clone(),
        gate: ChannelWeightsPrompt {
            text: alpha.text(),
            image: alpha.image(),
            knowledge: alpha.knowledge(),
            reasoning: alpha.reasoning(),
        },
        nearest_cues: nearest_cues(backend, ctx, fused, 5),
        evidence: ctx.evidence.iter().map(PromptEvidence::from).collect(),
        observations: ctx.reasoning.observed_evidence().map(PromptEvidence::from).collect(),
        reasoning_rationale: ctx.reasoning.rationale().to_vec(),
        feedback: ctx.feedback.as_ref().map(|f| FeedbackPrompt {
            round: f.round,
            weakest: f.weakest.as_str().to_string(),
            directive: f.directive.clone(),
        }),
    };
    let check = |v: &serde_json::Value| -> Result<(), String> {
        let out: ReportOut = serde_json::from_value(v.clone()).map_err(|e| e.to_string())?;
        for s in &out.explanation {
            if let Some(c) = s.cites.iter().find(|c| !ids.contains(c.as_str())) {
                return Err(format!("explanation cites unknown evidence `{c}`"));
            }
        }
        Ok(())
    };
    let req = ChatRequest::new(SchemaId::Report, &prompt);
    let out: ReportOut = chat_validated(backend, &req, &check)?.parse()?;
    let distribution = scores_to_distribution(&out.scores).map_err(BackendError::SchemaViolation)?;
    let mut cited: Vec<EvidenceRef> = Vec::new();
    for c in out.explanation.iter().flat_map(|s| &s.cites) {
        if !cited.contains(c) {
            cited.push(c.clone());
        }
    }
    let report = FusionReport {
        predicted: distribution.argmax(),
        distribution,
        text_cues: ctx.text_cues.clone(),
        image_cues: ctx.image_cues.clone(),
        cited_evidence: cited,
        explanation: FusionReport::render_explanation(&out.explanation),
        rationale: out.explanation,
        gate_weights: alpha,
    };
    report
        .validate()
        .map_err(|e| BackendError::SchemaViolation(e.to_string()))?;
    Ok(report)
}
