//! Acceptance suite. Prints one PASS, FAIL or SKIP line per criterion and
//! exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use chrono::{DateTime, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use multipress::backends::schema::distribution_to_scores;
use multipress::backends::{
    BackendConfig, BackendKind, Embedding, HttpBackend, MockBackend, MockFixtures,
    SchemaId, ENV_ENDPOINT,
};
use multipress::cli::manifest_agreement;
use multipress::eval::{confusion, macro_metrics, run_ablation_suite, sweep, EvalRun, SweepAxis, Variant};
use multipress::fusion::masked_softmax;
use multipress::model::{LabelDistribution, NewsInstance, PipelineContext, TopicLabel, NUM_LABELS};
use multipress::pipeline::{Pipeline, PipelineConfig};
use multipress::reasoning::{run_reasoning, ReasoningBudget, StopReason};
use multipress::retrieval::{ingest_reader, retrieve, EvidenceItem, EvidenceSource, KnowledgeBase, RetrievalConfig};
use multipress::reward::{reward_cons, reward_ground, total_reward, RewardWeights};
use multipress::synth::{generate, Kind, SynthOutput, SynthSpec};

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("retrieval oracle equivalence", retrieval_oracle),
        ("reward arithmetic", reward_arithmetic),
        ("gate properties", gate_properties),
        ("control-flow fidelity", control_flow),
        ("metrics oracle", metrics_oracle),
        ("ablation ordering on the synthetic set", ablation_ordering),
        ("refinement budget sweep", refinement_sweep),
        ("retrieval depth sweep", depth_sweep),
        ("determinism across parallelism", determinism),
        ("HTTP backend smoke", http_smoke),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = f();
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match v {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Verdict::Skip(d) => ("SKIP", d),
        };
        println!("criterion {:>2} {tag}  {name}: {detail} ({secs:.1}s)", i + 1);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------------------
// shared fixtures
// ---------------------------------------------------------------------------

const SYNTH_DIM: usize = 512;

struct SynthRun {
    out: SynthOutput,
    backend: MockBackend,
    kb: KnowledgeBase,
    base: PipelineConfig,
}

fn synth_run() -> SynthRun {
    let spec = SynthSpec::default();
    let out = generate(&spec).expect("default spec is valid");
    let backend = MockBackend::new(out.fixtures.clone(), spec.seed, SYNTH_DIM);
    let raw: String = out
        .kb
        .iter()
        .map(|r| serde_json::to_string(r).unwrap() + "\n")
        .collect();
    let report = ingest_reader(raw.as_bytes(), &backend).expect("synthetic KB ingests");
    let kb = KnowledgeBase::build(report.items).expect("synthetic KB builds");
    let base = PipelineConfig {
        seed: spec.seed,
        ..PipelineConfig::default()
    };
    SynthRun { out, backend, kb, base }
}

fn rand_unit(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if let Ok(e) = Embedding::new(v) {
            return e;
        }
    }
}

fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    dot / (na.sqrt() * nb.sqrt())
}

// ---------------------------------------------------------------------------
// 1. retrieval
// ---------------------------------------------------------------------------

fn retrieval_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let base = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    let mut compared = 0;
    let mut close_calls = 0;
    for case in 0..100 {
        let dim = rng.random_range(4..24);
        let n = rng.random_range(1..=1000);
        let mut items: Vec<EvidenceItem> = Vec::with_capacity(n);
        for j in 0..n {
            // every tenth item duplicates an earlier embedding to force score ties
            let emb = if j > 0 && j % 10 == 0 {
                items[rng.random_range(0..j)].embedding.clone()
            } else {
                rand_unit(&mut rng, dim)
            };
            let ts = rng
                .random_bool(0.7)
                .then(|| base + chrono::Duration::days(rng.random_range(0..400)));
            items.push(EvidenceItem::new_unscored(
                format!("k{case}-{:04}", rng.random_range(0..5000)) + &format!("-{j}"),
                "x",
                emb,
                ts,
                EvidenceSource::Kb,
            ));
        }
        let kb = KnowledgeBase::build(items.clone()).expect("random KB");
        let e_t = rng.random_bool(0.9).then(|| rand_unit(&mut rng, dim));
        let e_i = (e_t.is_none() || rng.random_bool(0.7)).then(|| rand_unit(&mut rng, dim));
        let cfg = RetrievalConfig {
            beta: rng.random_range(0.0..=1.0),
            top_k: rng.random_range(1..=20),
            theta_min: rng.random_range(-0.5..0.5),
            recency_half_life: rng.random_bool(0.5).then(|| rng.random_range(1.0..200.0)),
        };
        let got: Vec<(String, f64)> = retrieve(&kb, e_t.as_ref(), e_i.as_ref(), &cfg, None)
            .expect("retrieve")
            .into_iter()
            .map(|e| (e.id, e.score.unwrap()))
            .collect();

        let reference: Option<DateTime<Utc>> = items.iter().filter_map(|e| e.timestamp).max();
        let mut scored: Vec<(f64, f64, Option<DateTime<Utc>>, String)> = Vec::new();
        for it in &items {
            let ct = e_t.as_ref().map(|q| oracle_cosine(q.values(), it.embedding.values()));
            let ci = e_i.as_ref().map(|q| oracle_cosine(q.values(), it.embedding.values()));
            let raw = match (ct, ci) {
                (Some(t), Some(i)) => cfg.beta * t + (1.0 - cfg.beta) * i,
                (Some(t), None) => t,
                (None, Some(i)) => i,
                (None, None) => unreachable!(),
            };
            if (raw - cfg.theta_min).abs() < 1e-12 {
                close_calls += 1;
            }
            if raw < cfg.theta_min {
                continue;
            }
            let s = match (cfg.recency_half_life, it.timestamp, reference) {
                (Some(h), Some(ts), Some(r)) => {
                    let age = ((r - ts).num_milliseconds() as f64 / 86_400_000.0).max(0.0);
                    raw * 2f64.powf(-age / h)
                }
                _ => raw,
            };
            scored.push((s, raw, it.timestamp, it.id.clone()));
        }
        scored.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then_with(|| b.2.cmp(&a.2))
                .then_with(|| a.3.cmp(&b.3))
        });
        let want: Vec<(String, f64)> = scored.into_iter().take(cfg.top_k).map(|s| (s.3, s.0)).collect();
        let ids_equal = got.iter().map(|g| &g.0).eq(want.iter().map(|w| &w.0));
        let scores_close = got.iter().zip(&want).all(|(g, w)| (g.1 - w.1).abs() < 1e-12);
        if !(ids_equal && scores_close) {
            return Verdict::Fail(format!("case {case}: got {got:?}, oracle {want:?}"));
        }
        compared += 1;
    }
    let elapsed = start.elapsed();
    check(
        elapsed < Duration::from_secs(30) && close_calls == 0,
        format!("{compared}/100 KBs match the full-sort oracle, {close_calls} threshold close calls, {elapsed:.2?}"),
    )
}

// ---------------------------------------------------------------------------
// 2. reward
// ---------------------------------------------------------------------------

fn reward_arithmetic() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let a: f64 = rng.random_range(0.0..1.0);
        let b: f64 = rng.random_range(0.0..1.0 - a);
        let lam = [a, b, 1.0 - a - b];
        let w = RewardWeights::new(lam[0], lam[1], lam[2]).expect("weights sum to 1");
        let r: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        let hand = lam[0] * r[0] + lam[1] * r[1] + lam[2] * r[2];
        worst = worst.max((total_reward(r[0], r[1], r[2], &w) - hand).abs());
    }
    if worst > 1e-12 {
        return Verdict::Fail(format!("total reward off by {worst:e}"));
    }

    for case in 0..200 {
        let dim = rng.random_range(3..8);
        let theta: f64 = rng.random_range(-0.2..0.9);
        let sentences: Vec<Option<Embedding>> = (0..rng.random_range(1..8))
            .map(|_| rng.random_bool(0.9).then(|| rand_unit(&mut rng, dim)))
            .collect();
        let evidence: Vec<EvidenceItem> = (0..rng.random_range(0..8))
            .map(|j| {
                EvidenceItem::new_unscored(format!("e{j}"), "x", rand_unit(&mut rng, dim), None, EvidenceSource::Kb)
            })
            .collect();
        let refs: Vec<&EvidenceItem> = evidence.iter().collect();
        let (got, _) = reward_ground(&sentences, &refs, theta);
        let mut hits = 0;
        for s in sentences.iter().flatten() {
            let best = evidence
                .iter()
                .map(|e| s.cosine(&e.embedding).unwrap())
                .fold(f64::NEG_INFINITY, f64::max);
            if best >= theta {
                hits += 1;
            }
        }
        let want = hits as f64 / sentences.len() as f64;
        if got != want {
            return Verdict::Fail(format!("grounding case {case}: {got} vs scan {want}"));
        }

        let pool = ["ball", "stadium", "senator", "flag", "court", "rocket", "chip", "tree"];
        let named = |rng: &mut ChaCha8Rng, n: usize| -> Vec<(String, Option<Embedding>)> {
            (0..n)
                .map(|_| {
                    let name = pool[rng.random_range(0..pool.len())].to_string();
                    let e = rng.random_bool(0.85).then(|| rand_unit(rng, dim));
                    (name, e)
                })
                .collect()
        };
        let ne = rng.random_range(0..6);
        let no = rng.random_range(0..6);
        let ents = named(&mut rng, ne);
        let objs = named(&mut rng, no);
        let theta_c: f64 = rng.random_range(-0.3..0.9);
        let (got, _) = reward_cons(&ents, &objs, theta_c);
        let want = greedy_recount(&ents, &objs, theta_c);
        if got != want {
            return Verdict::Fail(format!("consistency case {case}: {got} vs recount {want}"));
        }
    }
    Verdict::Pass(format!(
        "1000 weighted sums within {worst:e}; 200 grounding scans and 200 greedy recounts exact"
    ))
}

/// Repeatedly takes the best remaining admissible pair.
fn greedy_recount(ents: &[(String, Option<Embedding>)], objs: &[(String, Option<Embedding>)], theta: f64) -> f64 {
    if ents.is_empty() && objs.is_empty() {
        return 1.0;
    }
    if ents.is_empty() || objs.is_empty() {
        return 0.0;
    }
    let sim = |i: usize, j: usize| -> f64 {
        if ents[i].0 == objs[j].0 {
            return 1.0;
        }
        match (&ents[i].1, &objs[j].1) {
            (Some(a), Some(b)) => a.cosine(b).unwrap(),
            _ => 0.0,
        }
    };
    let key = |i: usize, j: usize| {
        let (a, b) = (ents[i].0.clone(), objs[j].0.clone());
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    };
    let mut used_e = vec![false; ents.len()];
    let mut used_o = vec![false; objs.len()];
    let mut matched = 0;
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..ents.len() {
            for j in 0..objs.len() {
                if used_e[i] || used_o[j] || sim(i, j) < theta {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((s, bi, bj)) => sim(i, j) > s || (sim(i, j) == s && key(i, j) < key(bi, bj)),
                };
                if better {
                    best = Some((sim(i, j), i, j));
                }
            }
        }
        let Some((_, i, j)) = best else { break };
        used_e[i] = true;
        used_o[j] = true;
        matched += 1;
    }
    matched as f64 / ents.len().max(objs.len()) as f64
}

// ---------------------------------------------------------------------------
// 3. gate
// ---------------------------------------------------------------------------

fn gate_properties() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_sum: f64 = 0.0;
    let mut worst_shift: f64 = 0.0;
    for case in 0..10_000 {
        let logits: [f64; 4] = std::array::from_fn(|_| rng.random_range(-50.0..50.0));
        let mut avail: [bool; 4] = std::array::from_fn(|_| rng.random_bool(0.75));
        if !avail.iter().any(|a| *a) {
            avail[rng.random_range(0..4)] = true;
        }
        let w = masked_softmax(logits, avail).expect("one channel is available").0;
        let c: f64 = rng.random_range(-100.0..100.0);
        let shifted = masked_softmax(logits.map(|z| z + c), avail).expect("shifted").0;
        worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());
        for k in 0..4 {
            worst_shift = worst_shift.max((w[k] - shifted[k]).abs());
            if w[k] < 0.0 || (!avail[k] && w[k] != 0.0) {
                return Verdict::Fail(format!("case {case}: weights {w:?} with availability {avail:?}"));
            }
        }
    }
    check(
        worst_sum <= 1e-9 && worst_shift < 1e-9,
        format!("10000 vectors: max |sum − 1| = {worst_sum:e}, max shift difference = {worst_shift:e}"),
    )
}

// ---------------------------------------------------------------------------
// 4. control flow
// ---------------------------------------------------------------------------

fn scores_for(top: TopicLabel, p: f64) -> serde_json::Value {
    let mut v = vec![(1.0 - p) / (NUM_LABELS - 1) as f64; NUM_LABELS];
    v[top.index()] = p;
    json!(distribution_to_scores(&LabelDistribution::new(v).unwrap()))
}

fn control_flow() -> Verdict {
    // (a) early break and (c) call bound over the synthetic set
    let s = synth_run();
    let pipeline = Pipeline::new(&s.backend, &s.kb, s.base.clone()).expect("pipeline");
    let passes = s.base.passes() as usize;
    let outcome = pipeline.classify_batch(&s.out.dataset, 4);
    let mut early = 0;
    let mut exhausted = 0;
    for (inst, o) in s.out.dataset.iter().zip(&outcome.outcomes) {
        let r = match o {
            Ok(r) => r,
            Err(f) => return Verdict::Fail(format!("{} failed: {}", f.instance_id, f.error)),
        };
        let h: Vec<f64> = r.reward_history.iter().map(|b| b.r).collect();
        let (last, before) = h.split_last().expect("at least one pass");
        if let Some(x) = before.iter().find(|x| **x > s.base.tau) {
            return Verdict::Fail(format!("{}: no break after reward {x} > tau", inst.id));
        }
        if *last > s.base.tau {
            early += usize::from(h.len() < passes);
        } else if h.len() != passes {
            return Verdict::Fail(format!("{}: stopped at pass {} with reward {last}", inst.id, h.len()));
        } else {
            exhausted += 1;
        }
        let used = r.ledger.chats() + r.ledger.searches();
        let bound = s.base.call_bound(inst.images.len());
        if used > bound {
            return Verdict::Fail(format!("{}: {used} calls over the bound {bound}", inst.id));
        }
    }
    if early == 0 || exhausted == 0 {
        return Verdict::Fail(format!("vacuous break check: {early} early, {exhausted} exhausted"));
    }

    // (b) scripted stability stop at step 3
    let id = "stab-1";
    let step = |t: u32, label: TopicLabel, p: f64| {
        json!({
            "thought": format!("step {t}"),
            "actions": [{"type": "search", "query": format!("query {t}")}],
            "scores": scores_for(label, p),
            "rationale": [{"sentence": "Still looking.", "cites": []}],
        })
    };
    let fixtures = MockFixtures::default()
        .script(SchemaId::ReasonStep, id, Some(1), step(1, TopicLabel::Sports, 0.9))
        .script(SchemaId::ReasonStep, id, Some(2), step(2, TopicLabel::Economy, 0.6))
        .script(SchemaId::ReasonStep, id, Some(3), step(3, TopicLabel::Economy, 0.62))
        .script(SchemaId::ReasonStep, id, Some(4), step(4, TopicLabel::Health, 0.9));
    let backend = MockBackend::new(fixtures, 0, 64);
    let inst = NewsInstance {
        id: id.into(),
        headline: "Quiet day".into(),
        body: "Nothing happened.".into(),
        images: vec![],
        gold_label: None,
        timestamp: None,
    };
    let mut ctx = PipelineContext::for_instance(&inst);
    let budget = ReasoningBudget {
        max_iterations: 5,
        max_searches: 1,
        epsilon: 0.05,
    };
    let trace = run_reasoning(&backend, &mut ctx, &budget, 0.85, &|_| 0.0);
    if trace.stop_reason != Some(StopReason::Stabilized) || trace.steps.len() != 3 {
        return Verdict::Fail(format!(
            "scripted stability: stop {:?} after {} steps",
            trace.stop_reason,
            trace.steps.len()
        ));
    }
    Verdict::Pass(format!(
        "break rule held on 200 instances ({early} early, {exhausted} at the cap); stability stop at step 3; call bound held"
    ))
}

// ---------------------------------------------------------------------------
// 5. metrics
// ---------------------------------------------------------------------------

fn metrics_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..1000 {
        let n = rng.random_range(1..300);
        let classes = rng.random_range(1..=NUM_LABELS);
        let pick = |rng: &mut ChaCha8Rng| TopicLabel::from_index(rng.random_range(0..classes)).unwrap();
        let golds: Vec<TopicLabel> = (0..n).map(|_| pick(&mut rng)).collect();
        let preds: Vec<TopicLabel> = golds
            .iter()
            .map(|g| if rng.random_bool(0.5) { *g } else { pick(&mut rng) })
            .collect();
        let got = macro_metrics(&confusion(&preds, &golds).unwrap()).unwrap();

        let (mut sp, mut sr, mut sf) = (0.0, 0.0, 0.0);
        let mut per = Vec::new();
        for c in TopicLabel::ALL {
            let tp = preds.iter().zip(&golds).filter(|(p, g)| **p == c && **g == c).count();
            let pc = preds.iter().filter(|p| **p == c).count();
            let gc = golds.iter().filter(|g| **g == c).count();
            let p = if pc == 0 { 0.0 } else { tp as f64 / pc as f64 };
            let r = if gc == 0 { 0.0 } else { tp as f64 / gc as f64 };
            let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            per.push((p, r, f));
            sp += p;
            sr += r;
            sf += f;
        }
        let acc = preds.iter().zip(&golds).filter(|(p, g)| p == g).count() as f64 / n as f64;
        let k = NUM_LABELS as f64;
        let per_ok = got
            .per_class
            .iter()
            .zip(&per)
            .all(|(m, o)| m.precision == o.0 && m.recall == o.1 && m.f1 == o.2);
        if !(per_ok
            && got.accuracy == acc
            && got.macro_precision == sp / k
            && got.macro_recall == sr / k
            && got.macro_f1 == sf / k)
        {
            return Verdict::Fail(format!("case {case}: {got:?}"));
        }
    }
    Verdict::Pass("1000 random prediction sets match the brute-force recount exactly".into())
}

// ---------------------------------------------------------------------------
// 6–8. directional reproduction on the synthetic set
// ---------------------------------------------------------------------------

fn ablation_ordering() -> Verdict {
    let start = Instant::now();
    let s = synth_run();
    let runs = match run_ablation_suite(&s.backend, &s.kb, &s.out.dataset, &s.base, 4, |_, _| {}) {
        Ok(r) => r,
        Err(e) => return Verdict::Fail(e.to_string()),
    };
    let elapsed = start.elapsed();
    let full = runs[0].accuracy();
    let mut detail = format!("full {:.3}", full);
    let mut ok = elapsed < Duration::from_secs(300);
    for (v, run) in Variant::ALL.iter().zip(&runs) {
        let agree = manifest_agreement(&s.out.manifest, *v, run);
        ok &= agree >= 0.95;
        if *v != Variant::Full {
            ok &= full > run.accuracy();
            detail.push_str(&format!(", {} {:.3}", v.key(), run.accuracy()));
        }
        detail.push_str(&format!(" (agree {agree:.3})"));
    }
    detail.push_str(&format!(", {elapsed:.1?}"));
    check(ok, detail)
}

fn subset(runs: &[EvalRun], ids: &[String]) -> Vec<f64> {
    runs.iter().map(|r| r.subset_accuracy(ids)).collect()
}

fn refinement_sweep() -> Verdict {
    let s = synth_run();
    let ids = s.out.manifest.ids_of(&[Kind::Refine1, Kind::Refine2]);
    let runs = match sweep(&s.backend, &s.kb, &s.out.dataset, &s.base, SweepAxis::RefineIters, 4) {
        Ok(r) => r,
        Err(e) => return Verdict::Fail(e.to_string()),
    };
    let a = subset(&runs, &ids);
    let ok = !ids.is_empty() && a[0] <= a[1] && a[1] <= a[2] && a[3] - a[2] <= a[2] - a[1];
    check(ok, format!("subset of {} accuracy over 0..=3 refinements: {a:.3?}", ids.len()))
}

fn depth_sweep() -> Verdict {
    let s = synth_run();
    let ids = s.out.manifest.ids_of(&[Kind::Distractor]);
    let runs = match sweep(&s.backend, &s.kb, &s.out.dataset, &s.base, SweepAxis::TopK, 4) {
        Ok(r) => r,
        Err(e) => return Verdict::Fail(e.to_string()),
    };
    let a = subset(&runs, &ids);
    let ok = !ids.is_empty() && a[2] >= a[0] && a[3] <= a[2];
    check(ok, format!("subset of {} accuracy at k = 1, 3, 5, 10: {a:.3?}", ids.len()))
}

// ---------------------------------------------------------------------------
// 9. determinism
// ---------------------------------------------------------------------------

fn multipress(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_multipress"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "{args:?} exited {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out.stdout)
}

/// Relative path → bytes for every trace file under `root`.
fn trace_files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).into_iter().flatten().flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.to_string_lossy().ends_with(".trace.json") {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().expect("temp dir");
    let data = tmp.path().join("syn");
    let data_s = data.to_str().unwrap();
    if let Err(e) = multipress(&["synth", "--seed", "7", "--per-class", "25", "--out-dir", data_s]) {
        return Verdict::Fail(e);
    }
    let mut tables = Vec::new();
    let mut traces = Vec::new();
    for (run, par) in ["1", "8"].iter().enumerate() {
        let dir = tmp.path().join(format!("run{run}"));
        let args = [
            "ablate",
            "--seed",
            "7",
            "--data-dir",
            data_s,
            "--parallelism",
            par,
            "--trace-dir",
            dir.to_str().unwrap(),
        ];
        match multipress(&args) {
            Ok(t) => tables.push(t),
            Err(e) => return Verdict::Fail(e),
        }
        traces.push(trace_files(&dir));
    }
    let n = traces[0].len();
    check(
        tables[0] == tables[1] && traces[0] == traces[1] && n == 7 * 200,
        format!("tables equal: {}, {n} trace files equal: {}", tables[0] == tables[1], traces[0] == traces[1]),
    )
}

// ---------------------------------------------------------------------------
// 10. HTTP smoke
// ---------------------------------------------------------------------------

fn http_smoke() -> Verdict {
    if std::env::var(ENV_ENDPOINT).map_or(true, |e| e.trim().is_empty()) {
        return Verdict::Skip(format!("{ENV_ENDPOINT} is not set"));
    }
    let cfg = BackendConfig {
        kind: BackendKind::Http,
        ..BackendConfig::default()
    };
    let backend = match HttpBackend::from_env(cfg) {
        Ok(b) => b,
        Err(e) => return Verdict::Fail(e.to_string()),
    };
    let out = generate(&SynthSpec::default()).expect("default spec");
    let picked: Vec<NewsInstance> = out.dataset.iter().take(5).cloned().collect();
    let records: Vec<String> = out
        .kb
        .iter()
        .filter(|r| picked.iter().any(|i| r.id.contains(&i.id)))
        .map(|r| serde_json::to_string(r).unwrap())
        .collect();
    let kb = match ingest_reader(records.join("\n").as_bytes(), &backend).and_then(|r| KnowledgeBase::build(r.items)) {
        Ok(kb) => kb,
        Err(e) => return Verdict::Fail(format!("KB embedding failed: {e}")),
    };
    let cfg = PipelineConfig::default();
    let pipeline = match Pipeline::new(&backend, &kb, cfg) {
        Ok(p) => p,
        Err(e) => return Verdict::Fail(e.to_string()),
    };
    for inst in &picked {
        let r = match pipeline.classify(inst) {
            Ok(r) => r,
            Err(f) => return Verdict::Fail(format!("{}: {}", f.instance_id, f.error)),
        };
        if let Some(c) = r
            .report
            .rationale
            .iter()
            .flat_map(|s| &s.cites)
            .find(|c| r.context.resolve(c).is_none())
        {
            return Verdict::Fail(format!("{}: citation `{}` does not resolve", inst.id, c.as_str()));
        }
    }
    Verdict::Pass("5 instances classified with resolving citations".into())
}
