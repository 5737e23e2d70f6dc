//! Small text helpers shared by the agents and the mock backend.

/// Words dropped by [`content_tokens`].
const STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "of", "to", "in", "on", "at", "for", "with", "by", "from",
    "is", "are", "was", "were", "be", "been", "as", "it", "its", "this", "that", "these",
    "those", "into", "over", "after", "before", "has", "have", "had", "but", "not", "than",
    "their", "there", "which", "while", "about", "also", "amid", "per",
];

/// Lowercased alphanumeric word tokens, in order.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// [`tokens`] with stopwords removed. Falls back to all tokens when every
/// token is a stopword, so non-empty text never yields an empty bag.
pub fn content_tokens(text: &str) -> Vec<String> {
    let all = tokens(text);
    let content: Vec<String> = all
        .iter()
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .cloned()
        .collect();
    if content.is_empty() {
        all
    } else {
        content
    }
}

/// Canonical key for an entity or object name: punctuation stripped,
/// lowercased, whitespace runs collapsed to a single underscore.
pub fn normalize_entity(surface: &str) -> String {
    let cleaned: String = surface
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace() || *c == '_')
        .flat_map(char::to_lowercase)
        .collect();
    cleaned
        .split(|c: char| c.is_whitespace() || c == '_')
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join("_")
}

/// Splits prose into sentences on `.`, `!` and `?` followed by whitespace or
/// end of input. Empty fragments are dropped; terminators are kept.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        current.push(c);
        if matches!(c, '.' | '!' | '?') {
            let boundary = match chars.peek() {
                None => true,
                Some(n) => n.is_whitespace(),
            };
            if boundary {
                let s = current.trim();
                if !s.is_empty() {
                    out.push(s.to_string());
                }
                current.clear();
            }
        }
    }
    let s = current.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
    out
}

/// Citation markers of the form `[id]` found in `text`, in order of appearance.
pub fn citation_markers(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('[') {
        let after = &rest[open + 1..];
        match after.find(']') {
            Some(close) => {
                let id = after[..close].trim();
                if !id.is_empty() && !id.contains('[') {
                    out.push(id.to_string());
                }
                rest = &after[close + 1..];
            }
            None => break,
        }
    }
    out
}

/// Removes `[id]` citation markers and tidies the surrounding whitespace.
pub fn strip_citations(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut depth = 0usize;
    for c in text.chars() {
        match c {
            '[' => depth += 1,
            ']' if depth > 0 => depth -= 1,
            _ if depth == 0 => out.push(c),
            _ => {}
        }
    }
    let collapsed = out.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .replace(" .", ".")
        .replace(" ,", ",")
        .replace(" !", "!")
        .replace(" ?", "?")
}
