//! Stage-1 perception agents: symbolic cues plus a dense embedding for the
//! text and the image channel.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::schema::{
    ImagePerceptionOut, ImagePerceptionPrompt, TextPerceptionOut, TextPerceptionPrompt,
};
use crate::backends::{chat, Backend, BackendError, ChatRequest, EmbedInput, Embedding, SchemaId};
use crate::model::{ImageRef, TextView};
use crate::text;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerceptionError {
    #[error("instance `{0}` has neither headline nor body")]
    EmptyInstance(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Neg,
    Neu,
    Pos,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub surface: String,
    pub normalized: String,
    pub kind: String,
}

/// Symbolic text cues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextCues {
    pub entities: Vec<Entity>,
    pub keywords: Vec<String>,
    pub summary: Vec<String>,
    pub sentiment: Sentiment,
    /// Only present when the backend reports discourse cues.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub discourse: Vec<String>,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedObject {
    pub name: String,
    pub confidence: f64,
}

/// Symbolic image cues, merged over every image of an instance.
///
/// Values built by this module are canonical: objects deduplicated by name and
/// sorted by confidence descending (then name), summary and scene sentences
/// distinct and sorted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageCues {
    pub objects: Vec<DetectedObject>,
    pub scene: String,
    pub summary: Vec<String>,
    pub confidence: f64,
}

const SCENE_SEP: &str = "; ";

impl ImageCues {
    /// The sentinel for instances without images.
    pub fn empty() -> Self {
        Self {
            objects: Vec::new(),
            scene: String::new(),
            summary: Vec::new(),
            confidence: 0.0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty() && self.scene.is_empty() && self.summary.is_empty()
    }

    /// Mean object confidence, 0 without objects.
    pub fn mean_object_confidence(&self) -> f64 {
        if self.objects.is_empty() {
            0.0
        } else {
            self.objects.iter().map(|o| o.confidence).sum::<f64>() / self.objects.len() as f64
        }
    }

    fn canonical(
        objects: impl IntoIterator<Item = DetectedObject>,
        scenes: impl IntoIterator<Item = String>,
        summary: impl IntoIterator<Item = String>,
        confidence: f64,
    ) -> Self {
        let mut best: BTreeMap<String, f64> = BTreeMap::new();
        for o in objects {
            let key = text::normalize_entity(&o.name);
            if key.is_empty() {
                continue;
            }
            let slot = best.entry(key).or_insert(o.confidence);
            *slot = slot.max(o.confidence);
        }
        let mut objects: Vec<DetectedObject> = best
            .into_iter()
            .map(|(name, confidence)| DetectedObject { name, confidence })
            .collect();
        objects.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then_with(|| a.name.cmp(&b.name)));
        let scenes: std::collections::BTreeSet<String> = scenes
            .into_iter()
            .flat_map(|s| s.split(SCENE_SEP).map(|p| p.trim().to_string()).collect::<Vec<_>>())
            .filter(|s| !s.is_empty())
            .collect();
        let summary: std::collections::BTreeSet<String> = summary
            .into_iter()
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        Self {
            objects,
            scene: scenes.into_iter().collect::<Vec<_>>().join(SCENE_SEP),
            summary: summary.into_iter().take(2).collect(),
            confidence,
        }
    }

    /// Union of two cue sets: objects deduplicated by name keeping the max
    /// confidence. Commutative, and idempotent on canonical values.
    pub fn merge(&self, other: &ImageCues) -> ImageCues {
        if self.is_empty() {
            return other.clone();
        }
        if other.is_empty() {
            return self.clone();
        }
        Self::canonical(
            self.objects.iter().chain(&other.objects).cloned(),
            [self.scene.clone(), other.scene.clone()],
            self.summary.iter().chain(&other.summary).cloned(),
            self.confidence.max(other.confidence),
        )
    }

    /// Plain-text rendering used when a backend cannot embed images.
    pub fn describe(&self) -> String {
        let objects: Vec<&str> = self.objects.iter().map(|o| o.name.as_str()).collect();
        format!("{} {} {}", self.scene, objects.join(" "), self.summary.join(" "))
            .trim()
            .to_string()
    }
}

/// The string whose embedding is e_T: headline, newline, summary sentences.
pub fn text_embedding_input(headline: &str, summary: &[String]) -> String {
    format!("{}\n{}", headline.trim(), summary.join(" "))
}

pub fn perceive_text(
    backend: &dyn Backend,
    instance_id: &str,
    view: &TextView,
) -> Result<(TextCues, Embedding), PerceptionError> {
    if view.is_empty() {
        return Err(PerceptionError::EmptyInstance(instance_id.to_string()));
    }
    let prompt = TextPerceptionPrompt {
        instance_id: instance_id.to_string(),
        headline: view.headline.clone(),
        body: view.body.clone(),
    };
    let out: TextPerceptionOut = chat(backend, &ChatRequest::new(SchemaId::TextPerception, &prompt))?.parse()?;

    let mut entities: Vec<Entity> = Vec::new();
    for e in out.entities {
        let normalized = text::normalize_entity(&e.surface);
        if normalized.is_empty() || entities.iter().any(|x| x.normalized == normalized) {
            continue;
        }
        entities.push(Entity {
            surface: e.surface.trim().to_string(),
            normalized,
            kind: e.kind,
        });
    }
    let mut keywords: Vec<String> = Vec::new();
    for k in out.keywords {
        let k = k.trim().to_lowercase();
        if !k.is_empty() && !keywords.contains(&k) {
            keywords.push(k);
        }
    }
    let mut summary: Vec<String> = out
        .summary
        .into_iter()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if summary.is_empty() {
        let fallback = text::split_sentences(&view.body)
            .into_iter()
            .next()
            .unwrap_or_else(|| view.headline.trim().to_string());
        summary.push(fallback);
    }
    let embedding = backend.embed(&EmbedInput::Text(text_embedding_input(&view.headline, &summary)))?;
    let cues = TextCues {
        entities,
        keywords,
        summary,
        sentiment: out.sentiment,
        discourse: out.discourse,
        confidence: out.confidence,
    };
    Ok((cues, embedding))
}

/// Perceives every image and merges the results. Zero images give the empty
/// sentinel and no embedding.
pub fn perceive_image(
    backend: &dyn Backend,
    instance_id: &str,
    images: &[ImageRef],
) -> Result<(ImageCues, Option<Embedding>), PerceptionError> {
    let mut merged = ImageCues::empty();
    let mut embeddings = Vec::with_capacity(images.len());
    for (index, image) in images.iter().enumerate() {
        let prompt = ImagePerceptionPrompt {
            instance_id: instance_id.to_string(),
            index,
            image: image.clone(),
        };
        let req = ChatRequest::new(SchemaId::ImagePerception, &prompt).with_images(vec![image.clone()]);
        let out: ImagePerceptionOut = chat(backend, &req)?.parse()?;
        let cues = ImageCues::canonical(
            out.objects.into_iter().map(|o| DetectedObject {
                name: o.name,
                confidence: o.confidence,
            }),
            [out.scene],
            out.summary,
            out.confidence,
        );
        let embedding = match backend.embed(&EmbedInput::Image(image.clone())) {
            Ok(e) => e,
            Err(BackendError::Unsupported(_)) => backend.embed(&EmbedInput::Text(cues.describe()))?,
            Err(e) => return Err(e.into()),
        };
        embeddings.push(embedding);
        merged = merged.merge(&cues);
    }
    let embedding = Embedding::weighted_mean(embeddings.iter().map(|e| (1.0, e)));
    Ok((merged, embedding))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn obj(name: &str, c: f64) -> DetectedObject {
        DetectedObject {
            name: name.into(),
            confidence: c,
        }
    }

    fn cues(objs: Vec<DetectedObject>, scene: &str, summary: Vec<&str>) -> ImageCues {
        ImageCues::canonical(objs, [scene.to_string()], summary.into_iter().map(String::from), 0.5)
    }

    #[test]
    fn merge_keeps_max_confidence() {
        let a = cues(vec![obj("stadium", 0.7)], "arena", vec![]);
        let b = cues(vec![obj("stadium", 0.9), obj("ball", 0.4)], "arena", vec![]);
        let m = a.merge(&b);
        assert_eq!(m.objects, vec![obj("stadium", 0.9), obj("ball", 0.4)]);
        assert_eq!(m.scene, "arena");
    }

    #[test]
    fn merge_with_sentinel_is_identity() {
        let a = cues(vec![obj("flag", 0.3)], "rally", vec!["A rally."]);
        assert_eq!(a.merge(&ImageCues::empty()), a);
        assert_eq!(ImageCues::empty().merge(&a), a);
    }

    fn arb_cues() -> impl Strategy<Value = ImageCues> {
        let names = prop::sample::select(vec!["ball", "flag", "tree", "car", "robot"]);
        (
            prop::collection::vec((names, 0.0f64..=1.0), 0..6),
            prop::sample::select(vec!["", "rally", "arena", "lab"]),
            prop::collection::vec(prop::sample::select(vec!["One.", "Two.", "Three."]), 0..3),
        )
            .prop_map(|(objs, scene, summary)| {
                cues(objs.into_iter().map(|(n, c)| obj(n, c)).collect(), scene, summary)
            })
    }

    proptest! {
        #[test]
        fn merge_commutes(a in arb_cues(), b in arb_cues()) {
            prop_assert_eq!(a.merge(&b), b.merge(&a));
        }

        #[test]
        fn merge_idempotent(a in arb_cues()) {
            prop_assert_eq!(a.merge(&a), a);
        }

        #[test]
        fn objects_sorted_descending(a in arb_cues(), b in arb_cues()) {
            let m = a.merge(&b);
            for w in m.objects.windows(2) {
                prop_assert!(w[0].confidence >= w[1].confidence);
            }
        }
    }
}
