//! Batch behaviour and stage ordering on synthetic data.

use multipress::backends::{FailEntry, MockBackend, SchemaId};
use multipress::model::{AgentRole, NewsInstance};
use multipress::pipeline::{ClassificationResult, Pipeline, PipelineConfig};
use multipress::retrieval::{ingest_reader, KnowledgeBase};
use multipress::synth::{generate, SynthOutput, SynthSpec};

fn setup(per_class: usize, fail: &[&str]) -> (SynthOutput, MockBackend, KnowledgeBase) {
    let out = generate(&SynthSpec {
        per_class,
        ..SynthSpec::default()
    })
    .unwrap();
    let mut fixtures = out.fixtures.clone();
    for id in fail {
        fixtures.failures.push(FailEntry {
            instance: id.to_string(),
            role: Some(SchemaId::Report),
        });
    }
    let backend = MockBackend::new(fixtures, 7, 512);
    let raw: String = out.kb.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
    let kb = KnowledgeBase::build(ingest_reader(raw.as_bytes(), &backend).unwrap().items).unwrap();
    (out, backend, kb)
}

/// Stage 1 messages, then reason? → fuse → report → reward for each pass.
fn assert_stage_order(r: &ClassificationResult) {
    let msgs = r.context.messages();
    let mut i = 0;
    for role in [AgentRole::TextPerception, AgentRole::ImagePerception, AgentRole::Retrieval] {
        if msgs.get(i).is_some_and(|m| m.sender == role) {
            assert_eq!(msgs[i].round, 0);
            i += 1;
        }
    }
    let mut pass: u32 = 0;
    while i < msgs.len() {
        pass += 1;
        if msgs[i].sender == AgentRole::Reasoning {
            assert_eq!(msgs[i].round, pass);
            i += 1;
        }
        for role in [AgentRole::Fusion, AgentRole::Report, AgentRole::Reward] {
            assert_eq!(msgs[i].sender, role, "{}: message {i}", r.instance_id);
            assert_eq!(msgs[i].round, pass);
            i += 1;
        }
    }
    assert_eq!(pass as usize, r.reward_history.len());
}

#[test]
fn stages_follow_the_algorithm_order() {
    let (out, backend, kb) = setup(3, &[]);
    let p = Pipeline::new(&backend, &kb, PipelineConfig::default()).unwrap();
    let batch = p.classify_batch(&out.dataset, 4);
    assert_eq!(batch.failures().count(), 0);
    for r in batch.results() {
        assert_stage_order(r);
    }
}

#[test]
fn one_poisoned_instance_in_720() {
    let (out, backend, kb) = setup(90, &["syn-sports-0004"]);
    assert_eq!(out.dataset.len(), 720);
    let p = Pipeline::new(&backend, &kb, PipelineConfig::default()).unwrap();
    let batch = p.classify_batch(&out.dataset, 8);
    assert_eq!(batch.results().count(), 719);
    let failures: Vec<_> = batch.failures().collect();
    assert_eq!(failures.len(), 1);
    assert_eq!(failures[0].instance_id, "syn-sports-0004");
    // perception and retrieval survive in the partial context
    assert!(failures[0].context.text_cues.is_some());
    assert!(failures[0].ledger.chats() > 0);
}

#[test]
fn empty_batch() {
    let (_, backend, kb) = setup(1, &[]);
    let p = Pipeline::new(&backend, &kb, PipelineConfig::default()).unwrap();
    assert!(p.classify_batch(&[] as &[NewsInstance], 4).outcomes.is_empty());
}

#[test]
fn unreachable_threshold_still_halts() {
    let (out, backend, kb) = setup(2, &[]);
    let cfg = PipelineConfig {
        tau: 0.9999,
        ..PipelineConfig::default()
    };
    let passes = cfg.passes() as usize;
    let p = Pipeline::new(&backend, &kb, cfg).unwrap();
    for r in p.classify_batch(&out.dataset, 4).results() {
        assert_eq!(r.reward_history.len(), passes);
    }
}

#[test]
fn output_order_is_input_order() {
    let (out, backend, kb) = setup(2, &[]);
    let p = Pipeline::new(&backend, &kb, PipelineConfig::default()).unwrap();
    let ids = |par| -> Vec<String> {
        p.classify_batch(&out.dataset, par)
            .results()
            .map(|r| r.instance_id.clone())
            .collect()
    };
    let want: Vec<String> = out.dataset.iter().map(|i| i.id.clone()).collect();
    assert_eq!(ids(1), want);
    assert_eq!(ids(8), want);
}
