//! Metrics, the seven-variant ablation suite and the parameter sweeps.
//!
//! Per-class precision and recall use 0 when their denominator is 0, and the
//! macro averages run over all eight classes, including classes that never
//! occur.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::Backend;
use crate::model::{NewsInstance, TopicLabel, NUM_LABELS};
use crate::pipeline::{BatchOutcome, Modality, Pipeline, PipelineConfig, PipelineError};
use crate::retrieval::KnowledgeBase;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0} predictions for {1} gold labels")]
    LengthMismatch(usize, usize),
    #[error("cannot compute metrics on an empty confusion matrix")]
    EmptyMatrix,
    #[error("instance `{0}` has no gold label")]
    MissingGold(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// Counts indexed `[gold][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_LABELS]; NUM_LABELS],
    pub n: u64,
}

pub fn confusion(preds: &[TopicLabel], golds: &[TopicLabel]) -> Result<ConfusionMatrix, EvalError> {
    if preds.len() != golds.len() {
        return Err(EvalError::LengthMismatch(preds.len(), golds.len()));
    }
    let mut cm = ConfusionMatrix::default();
    for (p, g) in preds.iter().zip(golds) {
        cm.counts[g.index()][p.index()] += 1;
        cm.n += 1;
    }
    Ok(cm)
}

impl ConfusionMatrix {
    pub fn render(&self) -> String {
        let mut out = format!("{:>14}", "gold \\ pred");
        for l in TopicLabel::ALL {
            write!(out, " {:>6}", &l.name()[..l.name().len().min(6)]).unwrap();
        }
        out.push('\n');
        for g in TopicLabel::ALL {
            write!(out, "{:>14}", g.name()).unwrap();
            for p in TopicLabel::ALL {
                write!(out, " {:>6}", self.counts[g.index()][p.index()]).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn macro_metrics(cm: &ConfusionMatrix) -> Result<MetricsRow, EvalError> {
    if cm.n == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let mut per_class = Vec::with_capacity(NUM_LABELS);
    let mut trace = 0;
    for c in 0..NUM_LABELS {
        let tp = cm.counts[c][c];
        trace += tp;
        let predicted: u64 = (0..NUM_LABELS).map(|g| cm.counts[g][c]).sum();
        let gold: u64 = cm.counts[c].iter().sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push(ClassMetrics { precision, recall, f1 });
    }
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / NUM_LABELS as f64;
    Ok(MetricsRow {
        accuracy: ratio(trace, cm.n),
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        per_class,
    })
}

/// The full system and its six ablations, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoRag,
    NoReasoning,
    NoGating,
    NoReward,
    TextOnly,
    ImageOnly,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Full,
        Variant::NoRag,
        Variant::NoReasoning,
        Variant::NoGating,
        Variant::NoReward,
        Variant::TextOnly,
        Variant::ImageOnly,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoRag => "no_rag",
            Variant::NoReasoning => "no_reasoning",
            Variant::NoGating => "no_gating",
            Variant::NoReward => "no_reward",
            Variant::TextOnly => "text_only",
            Variant::ImageOnly => "image_only",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Variant::Full => "MultiPress (full)",
            Variant::NoRag => "w/o Retrieval-Augmented Generation",
            Variant::NoReasoning => "w/o Online Reasoning",
            Variant::NoGating => "w/o Gated Fusion",
            Variant::NoReward => "w/o Reward-Driven Optimization",
            Variant::TextOnly => "Text-only",
            Variant::ImageOnly => "Image-only",
        }
    }

    pub fn apply(self, base: &PipelineConfig) -> PipelineConfig {
        let mut cfg = base.clone();
        match self {
            Variant::Full => {}
            Variant::NoRag => cfg.enable_rag = false,
            Variant::NoReasoning => cfg.enable_reasoning = false,
            Variant::NoGating => cfg.enable_gating = false,
            Variant::NoReward => cfg.enable_reward_loop = false,
            Variant::TextOnly => cfg.modality = Modality::TextOnly,
            Variant::ImageOnly => cfg.modality = Modality::ImageOnly,
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub gold: TopicLabel,
    pub predicted: TopicLabel,
}

/// Metrics for one configuration. Failed instances are listed and left out
/// of the metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub name: String,
    pub metrics: Option<MetricsRow>,
    pub confusion: ConfusionMatrix,
    pub predictions: Vec<Prediction>,
    pub failures: Vec<String>,
}

impl EvalRun {
    pub fn accuracy(&self) -> f64 {
        self.metrics.as_ref().map_or(0.0, |m| m.accuracy)
    }

    /// Accuracy over the given instance ids only.
    pub fn subset_accuracy(&self, ids: &[String]) -> f64 {
        let wanted: std::collections::BTreeSet<&String> = ids.iter().collect();
        let hits: Vec<bool> = self
            .predictions
            .iter()
            .filter(|p| wanted.contains(&p.id))
            .map(|p| p.gold == p.predicted)
            .collect();
        if hits.is_empty() {
            0.0
        } else {
            hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64
        }
    }
}

/// Scores a batch against gold labels.
pub fn score_batch(name: &str, instances: &[NewsInstance], outcome: &BatchOutcome) -> Result<EvalRun, EvalError> {
    let mut predictions = Vec::new();
    let mut failures = Vec::new();
    for (inst, o) in instances.iter().zip(&outcome.outcomes) {
        let gold = inst.gold_label.ok_or_else(|| EvalError::MissingGold(inst.id.clone()))?;
        match o {
            Ok(r) => predictions.push(Prediction {
                id: inst.id.clone(),
                gold,
                predicted: r.predicted,
            }),
            Err(f) => failures.push(f.instance_id.clone()),
        }
    }
    let preds: Vec<TopicLabel> = predictions.iter().map(|p| p.predicted).collect();
    let golds: Vec<TopicLabel> = predictions.iter().map(|p| p.gold).collect();
    let cm = confusion(&preds, &golds)?;
    let metrics = if cm.n > 0 { Some(macro_metrics(&cm)?) } else { None };
    Ok(EvalRun {
        name: name.to_string(),
        metrics,
        confusion: cm,
        predictions,
        failures,
    })
}

/// Runs one configuration over the dataset. The batch outcome is returned
/// for trace writing.
pub fn evaluate(
    backend: &dyn Backend,
    kb: &KnowledgeBase,
    instances: &[NewsInstance],
    cfg: &PipelineConfig,
    name: &str,
    parallelism: usize,
) -> Result<(EvalRun, BatchOutcome), EvalError> {
    if let Some(i) = instances.iter().find(|i| i.gold_label.is_none()) {
        return Err(EvalError::MissingGold(i.id.clone()));
    }
    let pipeline = Pipeline::new(backend, kb, cfg.clone())?;
    let outcome = pipeline.classify_batch(instances, parallelism);
    Ok((score_batch(name, instances, &outcome)?, outcome))
}

/// All seven variants under the same seed, in table order.
pub fn run_ablation_suite(
    backend: &dyn Backend,
    kb: &KnowledgeBase,
    instances: &[NewsInstance],
    base: &PipelineConfig,
    parallelism: usize,
    mut on_batch: impl FnMut(Variant, &BatchOutcome),
) -> Result<Vec<EvalRun>, EvalError> {
    let mut rows = Vec::with_capacity(Variant::ALL.len());
    for v in Variant::ALL {
        let (run, outcome) = evaluate(backend, kb, instances, &v.apply(base), v.title(), parallelism)?;
        on_batch(v, &outcome);
        rows.push(run);
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    TopK,
    RefineIters,
}

impl SweepAxis {
    pub fn values(self) -> [u32; 4] {
        match self {
            SweepAxis::TopK => [1, 3, 5, 10],
            SweepAxis::RefineIters => [0, 1, 2, 3],
        }
    }

    pub fn apply(self, base: &PipelineConfig, value: u32) -> PipelineConfig {
        let mut cfg = base.clone();
        match self {
            SweepAxis::TopK => cfg.retrieval.top_k = value as usize,
            SweepAxis::RefineIters => cfg.refinements = Some(value),
        }
        cfg
    }

    pub fn key(self) -> &'static str {
        match self {
            SweepAxis::TopK => "top_k",
            SweepAxis::RefineIters => "refine_iters",
        }
    }
}

pub fn sweep(
    backend: &dyn Backend,
    kb: &KnowledgeBase,
    instances: &[NewsInstance],
    base: &PipelineConfig,
    axis: SweepAxis,
    parallelism: usize,
) -> Result<Vec<EvalRun>, EvalError> {
    axis.values()
        .into_iter()
        .map(|v| {
            let name = format!("{}={v}", axis.key());
            evaluate(backend, kb, instances, &axis.apply(base, v), &name, parallelism).map(|(r, _)| r)
        })
        .collect()
}

/// Aligned text table with one row per run.
pub fn render_table(runs: &[EvalRun]) -> String {
    let width = runs.iter().map(|r| r.name.len()).max().unwrap_or(0).max(7);
    let mut out = format!(
        "{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}  {:>6}\n",
        "variant", "Acc", "MP", "MR", "MF1", "failed"
    );
    out.push_str(&"-".repeat(width + 44));
    out.push('\n');
    for r in runs {
        let (a, p, rc, f) = r.metrics.as_ref().map_or((0.0, 0.0, 0.0, 0.0), |m| {
            (m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1)
        });
        writeln!(
            out,
            "{:<width$}  {:>7.2}  {:>7.2}  {:>7.2}  {:>7.2}  {:>6}",
            r.name,
            100.0 * a,
            100.0 * p,
            100.0 * rc,
            100.0 * f,
            r.failures.len()
        )
        .unwrap();
    }
    out
}
