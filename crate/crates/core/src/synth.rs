//! Seeded synthetic oracle corpus.
//!
//! Each instance is built so that a known subset of channels carries its
//! label, and a manifest records which pipeline variants should classify it
//! correctly. Images are caption records that the mock backend perceives.
//!
//! Every instance names a unique invented entity (two pseudo-words). Text
//! templates and caption templates draw from vocabularies that never appear
//! in knowledge-base snippets, so retrieval finds an instance's snippets only
//! through its entity. Topic keywords are split in two halves: article text
//! uses the first six of each label, snippets and web documents the last six.
//!
//! Instance kinds, per 25 instances of a class:
//!
//! | kind | count | signal |
//! |---|---|---|
//! | `easy` | 6 | text, image and a KB snippet all agree |
//! | `kb_required` | 3 | only a KB snippet about the entity |
//! | `reasoning_required` | 3 | only a web document found by searching the entity |
//! | `gate_required` | 3 | strong text, weak contradicting image |
//! | `image_required` | 3 | only the image |
//! | `refine1`, `refine2` | 2 + 2 | like `easy`, but the report agent answers a wrong label until feedback round 1 or 2 |
//! | `distractor` | 3 | ten KB snippets: the closest one contradicts, the next four agree, the last five contradict |
//!
//! Without any signal the pipeline predicts the first label (Politics), so
//! the manifest counts such instances as correct exactly when their label
//! is Politics.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::lexicon::{self, FILLER_WORDS, GENERIC_OBJECTS};
use crate::backends::{Caption, MockFixtures, ReportBias, WebDoc};
use crate::data::{write_jsonl, DataError, SplitManifest};
use crate::eval::Variant;
use crate::model::{ImageRef, NewsInstance, TopicLabel, NUM_LABELS};
use crate::retrieval::KbRecord;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Relative strength of each planted channel, in (0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelSignal {
    /// Scales the number of topic keywords in article text.
    pub text: f64,
    /// Scales detected-object confidence in topical captions.
    pub image: f64,
    /// Scales how often a snippet repeats the entity.
    pub kb: f64,
    /// Scales the number of keywords in web documents.
    pub reasoning: f64,
}

impl Default for ChannelSignal {
    fn default() -> Self {
        Self {
            text: 1.0,
            image: 1.0,
            kb: 1.0,
            reasoning: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub per_class: usize,
    pub channel_signal: ChannelSignal,
    /// Probability that an `easy` article gets one off-topic keyword.
    pub noise_rate: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            per_class: 25,
            channel_signal: ChannelSignal::default(),
            noise_rate: 0.1,
        }
    }
}

/// Instances per class in full-size mode.
pub const FULL_SIZE_PER_CLASS: usize = 900;

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.per_class < 1 {
            return Err(SynthError::BadSpec("per_class must be at least 1".into()));
        }
        if !(0.0..0.5).contains(&self.noise_rate) {
            return Err(SynthError::BadSpec(format!("noise_rate {} outside [0, 0.5)", self.noise_rate)));
        }
        let s = self.channel_signal;
        for (name, v) in [("text", s.text), ("image", s.image), ("kb", s.kb), ("reasoning", s.reasoning)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(SynthError::BadSpec(format!("{name} signal {v} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Easy,
    KbRequired,
    ReasoningRequired,
    GateRequired,
    ImageRequired,
    Refine1,
    Refine2,
    Distractor,
}

impl Kind {
    pub const ALL: [Kind; 8] = [
        Kind::Easy,
        Kind::KbRequired,
        Kind::ReasoningRequired,
        Kind::GateRequired,
        Kind::ImageRequired,
        Kind::Refine1,
        Kind::Refine2,
        Kind::Distractor,
    ];

    fn count(self) -> usize {
        match self {
            Kind::Easy => 6,
            Kind::Refine1 | Kind::Refine2 => 2,
            _ => 3,
        }
    }

    /// Variants that lose this kind's only signal, and whether the loss
    /// leaves no signal at all (predicting the fallback label) rather than a
    /// wrong one.
    fn failing_variants(self) -> &'static [(Variant, bool)] {
        match self {
            Kind::Easy => &[],
            Kind::KbRequired | Kind::Distractor => &[(Variant::NoRag, true), (Variant::ImageOnly, true)],
            Kind::ReasoningRequired => &[(Variant::NoReasoning, true), (Variant::ImageOnly, true)],
            Kind::GateRequired => &[(Variant::NoGating, false), (Variant::ImageOnly, false)],
            Kind::ImageRequired => &[(Variant::TextOnly, true)],
            Kind::Refine1 | Kind::Refine2 => &[(Variant::NoReasoning, false), (Variant::NoReward, false)],
        }
    }

    /// Expected correctness of an instance with gold `label` under `v`.
    pub fn expected_correct(self, label: TopicLabel, v: Variant) -> bool {
        match self.failing_variants().iter().find(|(f, _)| *f == v) {
            None => true,
            Some((_, no_signal)) => *no_signal && label == TopicLabel::ALL[0],
        }
    }
}

/// The 25-slot pattern each class cycles through.
fn kind_pattern() -> Vec<Kind> {
    Kind::ALL.iter().flat_map(|k| std::iter::repeat_n(*k, k.count())).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub label: TopicLabel,
    pub kind: Kind,
    pub entity: String,
    /// Wrong label planted in the instance (bias, weak image or distractors).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confuser: Option<TopicLabel>,
    /// Variant key → whether the variant should classify it correctly.
    pub expected: BTreeMap<String, bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: SynthSpec,
    pub instances: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn ids_of(&self, kinds: &[Kind]) -> Vec<String> {
        self.instances
            .iter()
            .filter(|e| kinds.contains(&e.kind))
            .map(|e| e.id.clone())
            .collect()
    }

    /// Ids the manifest expects `variant` to get wrong.
    pub fn expected_failures(&self, variant: Variant) -> BTreeSet<String> {
        self.instances
            .iter()
            .filter(|e| !e.expected.get(variant.key()).copied().unwrap_or(true))
            .map(|e| e.id.clone())
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| {
            SynthError::Data(DataError::Schema {
                line: e.line(),
                reason: e.to_string(),
            })
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub dataset: Vec<NewsInstance>,
    pub kb: Vec<KbRecord>,
    pub fixtures: MockFixtures,
    pub manifest: Manifest,
    pub split: SplitManifest,
}

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const KB_FILE: &str = "kb.jsonl";
pub const FIXTURES_FILE: &str = "fixtures.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SPLIT_FILE: &str = "split.json";

impl SynthOutput {
    /// Writes the five output files into `dir`, creating it if needed.
    pub fn write_to(&self, dir: &Path) -> Result<(), SynthError> {
        let io = |p: &Path, e: std::io::Error| DataError::Io {
            path: p.display().to_string(),
            reason: e.to_string(),
        };
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        write_jsonl(&dir.join(DATASET_FILE), &self.dataset)?;
        write_jsonl(&dir.join(KB_FILE), &self.kb)?;
        let fixtures = dir.join(FIXTURES_FILE);
        std::fs::write(&fixtures, self.fixtures.to_jsonl()).map_err(|e| io(&fixtures, e))?;
        for (name, value) in [
            (MANIFEST_FILE, serde_json::to_string_pretty(&self.manifest)),
            (SPLIT_FILE, serde_json::to_string_pretty(&self.split)),
        ] {
            let path = dir.join(name);
            let mut text = value.expect("manifests are plain data");
            text.push('\n');
            std::fs::write(&path, text).map_err(|e| io(&path, e))?;
        }
        Ok(())
    }
}

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "kr", "tr", "vl"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "eo"];
const CODAS: &[&str] = &["", "", "n", "r", "x", "th", "m"];

/// Words only knowledge-base snippets use.
const KB_WORDS: &[&str] = &[
    "according", "archive", "documented", "background", "profile", "history", "sources",
    "linked", "entries", "dossier", "registry", "chronicle", "noted", "filed", "cataloged",
    "briefing", "ledger", "compiled", "annals", "indexed",
];

/// Words only captions use.
const CAPTION_WORDS: &[&str] = &["pictured", "beside", "frame", "foreground", "shot", "visible", "closeup", "wide"];
const SCENES: &[&str] = &["indoors", "outdoors", "night", "daylight", "aerial", "closeup"];

/// Words only web documents use.
const WEB_WORDS: &[&str] = &["blog", "coverage", "online", "posted", "thread", "readers", "explainer", "digest"];

fn text_keywords(label: TopicLabel) -> &'static [&'static str] {
    &lexicon::keywords(label)[..6]
}

fn kb_keywords(label: TopicLabel) -> &'static [&'static str] {
    &lexicon::keywords(label)[6..]
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    c.next()
        .map(|f| f.to_uppercase().chain(c).collect())
        .unwrap_or_default()
}

struct Gen {
    rng: ChaCha8Rng,
    used: BTreeSet<String>,
    spec: SynthSpec,
}

impl Gen {
    fn pick<'a>(&mut self, pool: &'a [&'a str]) -> &'a str {
        pool.choose(&mut self.rng).expect("pools are non-empty")
    }

    fn pick_n<'a>(&mut self, pool: &'a [&'a str], n: usize) -> Vec<&'a str> {
        pool.choose_multiple(&mut self.rng, n.min(pool.len())).copied().collect()
    }

    fn pseudo_word(&mut self) -> String {
        loop {
            let syllables = self.rng.random_range(2..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(self.pick(ONSETS));
                w.push_str(self.pick(VOWELS));
            }
            w.push_str(self.pick(CODAS));
            let taken = lexicon::word_label(&w).is_some()
                || lexicon::is_object_word(&w)
                || FILLER_WORDS.contains(&w.as_str())
                || KB_WORDS.contains(&w.as_str());
            if !taken && self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn entity(&mut self) -> String {
        format!("{} {}", capitalize(&self.pseudo_word()), capitalize(&self.pseudo_word()))
    }

    fn other_label(&mut self, label: TopicLabel) -> TopicLabel {
        let shift = self.rng.random_range(1..NUM_LABELS);
        TopicLabel::ALL[(label.index() + shift) % NUM_LABELS]
    }

    fn fillers(&mut self, n: usize) -> String {
        self.pick_n(FILLER_WORDS, n).join(" ")
    }

    fn kb_words(&mut self, n: usize) -> String {
        self.pick_n(KB_WORDS, n).join(" ")
    }

    fn caption(&mut self, objects: &[(&str, f64)]) -> ImageRef {
        let names: Vec<&str> = objects.iter().map(|o| o.0).collect();
        let description = format!(
            "{} {} {} pictured {}.",
            capitalize(self.pick(&["a", "one"])),
            names.join(" and "),
            self.pick(CAPTION_WORDS),
            self.pick(CAPTION_WORDS)
        );
        let c = Caption {
            description,
            objects: objects.iter().map(|(n, c)| (n.to_string(), (c * 100.0).round() / 100.0)).collect(),
            scene: self.pick(SCENES).to_string(),
        };
        ImageRef::new(c.render())
    }

    fn topical_captions(&mut self, label: TopicLabel, first: &[&str], lo: f64, hi: f64) -> Vec<ImageRef> {
        let count = self.rng.random_range(1..=2);
        let mut out = Vec::new();
        for i in 0..count {
            let names: Vec<&str> = if i == 0 && !first.is_empty() {
                first.to_vec()
            } else {
                self.pick_n(lexicon::objects(label), 2)
            };
            let objs: Vec<(&str, f64)> = names
                .into_iter()
                .map(|n| (n, self.rng.random_range(lo..=hi)))
                .collect();
            out.push(self.caption(&objs));
        }
        out
    }

    fn gold_captions(&mut self, label: TopicLabel, first: &[&str]) -> Vec<ImageRef> {
        let s = self.spec.channel_signal.image;
        self.topical_captions(label, first, 0.8 * s, 0.95 * s)
    }

    fn generic_captions(&mut self) -> Vec<ImageRef> {
        let count = self.rng.random_range(1..=2);
        (0..count)
            .map(|_| {
                let names = self.pick_n(GENERIC_OBJECTS, 2);
                let objs: Vec<(&str, f64)> = names.into_iter().map(|n| (n, self.rng.random_range(0.6..=0.8))).collect();
                self.caption(&objs)
            })
            .collect()
    }

    /// Article text naming the entity with no topical words.
    fn entity_only_text(&mut self, e: &str) -> (String, String) {
        let headline = format!("{e} draws {} {}", self.fillers(1), self.fillers(1));
        let body = format!(
            "{e} met {} on {}. Observers said {e} will return to the {}. The {} gave no {}.",
            self.fillers(2),
            self.fillers(1),
            self.fillers(1),
            self.fillers(1),
            self.fillers(1)
        );
        (headline, body)
    }

    /// Article text with `kws` topic keywords, `objects` topical object
    /// words and optional extra keywords late in the body.
    fn topical_text(&mut self, e: &str, kws: &[&str], objects: &[&str], extra: &[&str]) -> (String, String) {
        let headline = format!("{e} shapes {} {}", kws[0], self.fillers(1));
        let mut body = format!("{e} was at the center of {} {} this {}.", kws.join(" and "), self.fillers(1), self.fillers(1));
        if !objects.is_empty() {
            body.push_str(&format!(" Observers noticed {} near the {}.", objects.join(" and "), self.fillers(1)));
        }
        body.push_str(&format!(" The {} gave a {} {}.", self.fillers(1), self.fillers(1), self.fillers(1)));
        if !extra.is_empty() {
            body.push_str(&format!(" Some mentioned {} as well.", extra.join(" and ")));
        }
        (headline, body)
    }

    /// A snippet that names the entity `reps` times with `kws` keywords.
    fn snippet(&mut self, e: &str, reps: usize, kws: &[&str], padding: usize) -> String {
        let mut parts = vec![format!("{e} {} {}.", self.kb_words(1), kws.join(" "))];
        for _ in 1..reps {
            parts.push(format!("{e} {}.", self.kb_words(1)));
        }
        if padding > 0 {
            parts.push(format!("{}.", capitalize(&self.kb_words(padding))));
        }
        parts.join(" ")
    }

    fn n_text_keywords(&self) -> usize {
        ((2.0 * self.spec.channel_signal.text).round() as usize).max(1)
    }

    fn kb_reps(&self, base: usize) -> usize {
        ((base as f64 * self.spec.channel_signal.kb).round() as usize).max(1)
    }
}

fn base_time() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).single().expect("valid date")
}

/// Generates the corpus. A pure function of `spec`.
pub fn generate(spec: &SynthSpec) -> Result<SynthOutput, SynthError> {
    spec.validate()?;
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        used: BTreeSet::new(),
        spec: *spec,
    };
    let pattern = kind_pattern();
    let mut dataset = Vec::new();
    let mut kb = Vec::new();
    let mut fixtures = MockFixtures::default();
    let mut entries = Vec::new();
    let t0 = base_time();

    for label in TopicLabel::ALL {
        for i in 0..spec.per_class {
            let kind = pattern[i % pattern.len()];
            let id = format!("syn-{}-{i:04}", label.name().to_lowercase());
            let e = g.entity();
            let timestamp = t0 + Duration::hours((dataset.len() * 3) as i64);
            let kb_time = timestamp - Duration::days(g.rng.random_range(1..60));
            let mut confuser = None;
            let kb_item = |kb: &mut Vec<KbRecord>, suffix: &str, text: String| {
                kb.push(KbRecord {
                    id: format!("kb-{id}-{suffix}"),
                    text,
                    timestamp: Some(kb_time),
                    source_tag: Some("synthetic".into()),
                });
            };
            let n_kw = g.n_text_keywords();
            let (headline, body, images) = match kind {
                Kind::Easy | Kind::Refine1 | Kind::Refine2 => {
                    let kws = g.pick_n(text_keywords(label), n_kw);
                    let objs = g.pick_n(lexicon::objects(label), 2);
                    let extra: Vec<&str> = if kind == Kind::Easy && g.rng.random_bool(spec.noise_rate) {
                        let other = g.other_label(label);
                        vec![g.pick(text_keywords(other))]
                    } else {
                        vec![]
                    };
                    let (h, b) = g.topical_text(&e, &kws, &objs, &extra);
                    let kkw = g.pick_n(kb_keywords(label), 2);
                    let reps = g.kb_reps(2);
                    let text = g.snippet(&e, reps, &kkw, 0);
                    kb_item(&mut kb, "g1", text);
                    if kind != Kind::Easy {
                        let bias = g.other_label(label);
                        confuser = Some(bias);
                        fixtures.biases.push(ReportBias {
                            instance: id.clone(),
                            label: bias,
                            stubborn_rounds: if kind == Kind::Refine1 { 1 } else { 2 },
                        });
                    }
                    let imgs = g.gold_captions(label, &objs);
                    (h, b, imgs)
                }
                Kind::KbRequired => {
                    let (h, b) = g.entity_only_text(&e);
                    let kkw = g.pick_n(kb_keywords(label), 3);
                    let reps = g.kb_reps(2);
                    let text = g.snippet(&e, reps, &kkw, 0);
                    kb_item(&mut kb, "g1", text);
                    (h, b, g.generic_captions())
                }
                Kind::ReasoningRequired => {
                    let (h, b) = g.entity_only_text(&e);
                    let n = ((3.0 * spec.channel_signal.reasoning).round() as usize).max(1);
                    let kws = g.pick_n(kb_keywords(label), n);
                    let text = format!(
                        "{e} {} {}. {} {}.",
                        g.pick(WEB_WORDS),
                        kws.join(" "),
                        capitalize(g.pick(WEB_WORDS)),
                        g.pick(WEB_WORDS)
                    );
                    fixtures.web_docs.push(WebDoc {
                        id: format!("web-{id}"),
                        text,
                        timestamp: Some(kb_time),
                    });
                    (h, b, g.generic_captions())
                }
                Kind::GateRequired => {
                    let other = g.other_label(label);
                    confuser = Some(other);
                    let mut kws = g.pick_n(text_keywords(label), n_kw.max(2));
                    kws.push(g.pick(text_keywords(other)));
                    let (h, b) = g.topical_text(&e, &kws, &[], &[]);
                    let imgs = g.topical_captions(other, &[], 0.15, 0.3);
                    (h, b, imgs)
                }
                Kind::ImageRequired => {
                    let (h, b) = g.entity_only_text(&e);
                    (h, b, g.gold_captions(label, &[]))
                }
                Kind::Distractor => {
                    let other = g.other_label(label);
                    confuser = Some(other);
                    let (h, b) = g.entity_only_text(&e);
                    let ckw = g.pick_n(kb_keywords(other), 2);
                    let text = g.snippet(&e, 3, &ckw, 0);
                    kb_item(&mut kb, "d1", text);
                    for j in 1..=4 {
                        let gkw = g.pick_n(kb_keywords(label), 2);
                        let text = g.snippet(&e, 2, &gkw, 1);
                        kb_item(&mut kb, &format!("g{j}"), text);
                    }
                    for j in 2..=6 {
                        let ckw = g.pick_n(kb_keywords(other), 2);
                        let text = g.snippet(&e, 1, &ckw, 2);
                        kb_item(&mut kb, &format!("c{j}"), text);
                    }
                    (h, b, g.generic_captions())
                }
            };
            let expected = Variant::ALL
                .iter()
                .map(|v| (v.key().to_string(), kind.expected_correct(label, *v)))
                .collect();
            entries.push(ManifestEntry {
                id: id.clone(),
                label,
                kind,
                entity: e.clone(),
                confuser,
                expected,
            });
            dataset.push(NewsInstance {
                id,
                headline,
                body,
                images,
                gold_label: Some(label),
                timestamp: Some(timestamp),
            });
        }
    }

    // background snippets with no entity
    for n in 0..(4 * spec.per_class) {
        let label = TopicLabel::ALL[n % NUM_LABELS];
        let kws = g.pick_n(kb_keywords(label), 2);
        let text = format!("{} {}. {}.", capitalize(&g.kb_words(2)), kws.join(" "), capitalize(&g.kb_words(3)));
        kb.push(KbRecord {
            id: format!("kb-noise-{n:04}"),
            text,
            timestamp: Some(t0 - Duration::days(g.rng.random_range(1..365))),
            source_tag: Some("background".into()),
        });
    }
    for label in TopicLabel::ALL {
        let kws = g.pick_n(kb_keywords(label), 3);
        fixtures.web_docs.push(WebDoc {
            id: format!("web-generic-{}", label.name().to_lowercase()),
            text: format!("{} {} {}.", capitalize(g.pick(WEB_WORDS)), g.pick(WEB_WORDS), kws.join(" ")),
            timestamp: None,
        });
    }

    let mut ids: Vec<String> = dataset.iter().map(|d| d.id.clone()).collect();
    ids.sort();
    let split = SplitManifest::random(&ids, 0.9, spec.seed);
    // interleave classes so batches and splits are not class-sorted
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut g.rng);
    let dataset = order.iter().map(|i| dataset[*i].clone()).collect();
    let instances = order.iter().map(|i| entries[*i].clone()).collect();
    Ok(SynthOutput {
        dataset,
        kb,
        fixtures,
        manifest: Manifest {
            spec: *spec,
            instances,
        },
        split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pattern_fills_a_class() {
        let p = kind_pattern();
        assert_eq!(p.len(), 25);
    }

    #[test]
    fn balanced_and_deterministic() {
        let spec = SynthSpec::default();
        let a = generate(&spec).unwrap();
        assert_eq!(a.dataset.len(), 200);
        for l in TopicLabel::ALL {
            assert_eq!(a.dataset.iter().filter(|d| d.gold_label == Some(l)).count(), 25);
        }
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate(&SynthSpec { seed: 8, ..spec }).unwrap();
        assert_ne!(a.dataset, c.dataset);
        assert_eq!(a.split.train.len() + a.split.test.len(), 200);
        a.split.validate().unwrap();
    }

    #[test]
    fn entities_unique_and_text_well_formed() {
        let out = generate(&SynthSpec::default()).unwrap();
        let entities: BTreeSet<&String> = out.manifest.instances.iter().map(|e| &e.entity).collect();
        assert_eq!(entities.len(), out.manifest.instances.len());
        for d in &out.dataset {
            d.validate().unwrap();
            assert!(!d.images.is_empty() && d.images.len() <= 2);
            for img in &d.images {
                assert!(Caption::parse(img.as_str()).is_some());
            }
        }
    }

    #[test]
    fn expected_correctness_rules() {
        use TopicLabel::*;
        assert!(!Kind::KbRequired.expected_correct(Sports, Variant::NoRag));
        assert!(Kind::KbRequired.expected_correct(Politics, Variant::NoRag));
        assert!(!Kind::GateRequired.expected_correct(Politics, Variant::NoGating));
        assert!(Kind::Easy.expected_correct(Health, Variant::ImageOnly));
        assert!(!Kind::Refine2.expected_correct(Politics, Variant::NoReward));
    }

    #[test]
    fn spec_validation() {
        assert!(SynthSpec { per_class: 0, ..SynthSpec::default() }.validate().is_err());
        assert!(SynthSpec { noise_rate: 0.5, ..SynthSpec::default() }.validate().is_err());
    }
}
