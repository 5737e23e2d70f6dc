//! Topic lexicon used by the mock backend to "understand" text and captions,
//! and by the synthetic generator to plant signals the mock will pick up.
//!
//! Keyword and object lists are pairwise disjoint across labels, so every
//! lexicon hit votes for exactly one label.

use crate::model::{TopicLabel, NUM_LABELS};
use crate::text;

const KEYWORDS: [[&str; 12]; NUM_LABELS] = [
    [
        "election", "ballot", "parliament", "senator", "diplomacy", "legislation", "campaign",
        "minister", "referendum", "coalition", "treaty", "governor",
    ],
    [
        "inflation", "tariff", "revenue", "stocks", "recession", "investors", "mortgage",
        "exports", "unemployment", "earnings", "currency", "dividend",
    ],
    [
        "software", "startup", "semiconductor", "algorithm", "smartphone", "cybersecurity",
        "broadband", "encryption", "chipmaker", "firmware", "cloud", "database",
    ],
    [
        "tournament", "championship", "striker", "goalkeeper", "playoff", "marathon", "league",
        "coach", "innings", "medal", "referee", "sprinter",
    ],
    [
        "premiere", "album", "concert", "actress", "festival", "sitcom", "blockbuster",
        "celebrity", "soundtrack", "oscar", "streaming", "choreographer",
    ],
    [
        "vaccine", "hospital", "epidemic", "diagnosis", "clinic", "patients", "nutrition",
        "surgery", "therapy", "outbreak", "pharmacy", "cardiology",
    ],
    [
        "climate", "emissions", "pollution", "wildfire", "biodiversity", "deforestation",
        "drought", "recycling", "conservation", "glacier", "habitat", "carbon",
    ],
    [
        "telescope", "genome", "physics", "laboratory", "astronomers", "experiment", "particle",
        "fossil", "quantum", "neuroscience", "orbit", "molecule",
    ],
];

const OBJECTS: [[&str; 6]; NUM_LABELS] = [
    ["podium", "flag", "lectern", "rosette", "placard", "gavel"],
    ["banknotes", "ticker", "coins", "cargo", "chart", "vault"],
    ["laptop", "circuitboard", "robot", "server", "drone", "keyboard"],
    ["stadium", "ball", "jersey", "scoreboard", "trophy", "racket"],
    ["guitar", "spotlight", "camera", "curtain", "costume", "microphone"],
    ["stethoscope", "syringe", "ambulance", "mask", "pills", "wheelchair"],
    ["turbine", "panels", "forest", "smokestack", "iceberg", "windmill"],
    ["microscope", "beaker", "petri", "rocket", "skeleton", "satellite"],
];

/// Concrete objects that carry no topic signal.
pub const GENERIC_OBJECTS: &[&str] = &[
    "person", "building", "street", "table", "car", "window", "crowd", "tree", "bench", "door",
    "sky", "sign",
];

/// Topic-neutral vocabulary for padding synthetic text.
pub const FILLER_WORDS: &[&str] = &[
    "officials", "reported", "week", "statement", "residents", "local", "announced", "plans",
    "group", "meeting", "city", "morning", "update", "details", "spokesperson", "visit",
    "monday", "region", "program", "review", "community", "support", "district", "talks",
    "evening", "source", "agency", "board", "event", "issue", "response", "project", "members",
    "team", "office", "public", "decision", "afternoon", "center", "initiative",
];

pub fn keywords(label: TopicLabel) -> &'static [&'static str] {
    &KEYWORDS[label.index()]
}

pub fn objects(label: TopicLabel) -> &'static [&'static str] {
    &OBJECTS[label.index()]
}

pub fn keyword_label(word: &str) -> Option<TopicLabel> {
    let w = word.to_lowercase();
    TopicLabel::ALL
        .into_iter()
        .find(|l| KEYWORDS[l.index()].contains(&w.as_str()))
}

pub fn object_label(word: &str) -> Option<TopicLabel> {
    let w = word.to_lowercase();
    TopicLabel::ALL
        .into_iter()
        .find(|l| OBJECTS[l.index()].contains(&w.as_str()))
}

/// Either a topical object or a generic one.
pub fn is_object_word(word: &str) -> bool {
    object_label(word).is_some() || GENERIC_OBJECTS.contains(&word.to_lowercase().as_str())
}

/// Label of a keyword or object word.
pub fn word_label(word: &str) -> Option<TopicLabel> {
    keyword_label(word).or_else(|| object_label(word))
}

/// Per-label counts of keyword and object hits in `text`.
pub fn votes(text: &str) -> [f64; NUM_LABELS] {
    let mut v = [0.0; NUM_LABELS];
    for tok in text::tokens(text) {
        if let Some(l) = word_label(&tok) {
            v[l.index()] += 1.0;
        }
    }
    v
}

/// Keywords (not objects) found in `text`, in order of first appearance.
pub fn keywords_in(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for tok in text::tokens(text) {
        if keyword_label(&tok).is_some() && !out.contains(&tok) {
            out.push(tok);
        }
    }
    out
}

/// Object words (topical or generic) found in `text`, in order of first appearance.
pub fn objects_in(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for tok in text::tokens(text) {
        if is_object_word(&tok) && !out.contains(&tok) {
            out.push(tok);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn vocabularies_are_disjoint() {
        let mut seen = BTreeSet::new();
        let all = KEYWORDS
            .iter()
            .flatten()
            .chain(OBJECTS.iter().flatten())
            .chain(GENERIC_OBJECTS)
            .chain(FILLER_WORDS);
        for w in all {
            assert!(seen.insert(*w), "`{w}` appears twice");
            assert_eq!(text::tokens(w), vec![w.to_string()], "`{w}` is not a single token");
        }
    }

    #[test]
    fn votes_count_hits() {
        let v = votes("The election ballot was held near the stadium.");
        assert_eq!(v[TopicLabel::Politics.index()], 2.0);
        assert_eq!(v[TopicLabel::Sports.index()], 1.0);
        assert_eq!(v.iter().sum::<f64>(), 3.0);
    }
}
