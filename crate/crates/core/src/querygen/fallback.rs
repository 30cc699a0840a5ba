use std::collections::HashSet;

use super::{QueryOrigin, RegionalDescription, SceneDescription, TextQuery};

/// Query used when nothing survives the subtraction.
pub const FALLBACK_QUERY: &str = "background ambience";

/// English function words ignored by the offline subtraction.
pub const STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "but", "of", "on", "in", "at", "to", "from", "by", "with", "without", "for", "into",
    "onto", "over", "under", "near", "is", "are", "was", "were", "be", "been", "being", "it", "its", "this", "that",
    "these", "those", "there", "here", "as", "while", "some", "his", "her", "their", "he", "she", "they", "them",
    "who", "which", "can", "has", "have", "very",
];

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn content_tokens(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// Content tokens of `d_v` absent from `d_a`, in order, joined by spaces.
pub fn fallback_subtract(d_v: &SceneDescription, d_a: &RegionalDescription) -> TextQuery {
    let removed: HashSet<String> = tokenize(&d_a.text).into_iter().collect();
    let kept: Vec<String> = content_tokens(&d_v.text)
        .into_iter()
        .filter(|t| !removed.contains(t))
        .collect();
    let text = if kept.is_empty() {
        FALLBACK_QUERY.to_string()
    } else {
        kept.join(" ")
    };
    // Tokens are short, but the length cap still applies.
    TextQuery::new(&text, QueryOrigin::Fallback).unwrap_or(TextQuery {
        text: FALLBACK_QUERY.into(),
        origin: QueryOrigin::Fallback,
    })
}
