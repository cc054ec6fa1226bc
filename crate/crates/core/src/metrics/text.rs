//! Shared text normalization for the rule-based metrics.

/// Lowercase, replace punctuation with spaces, split on whitespace.
///
/// All metric-side text processing goes through this tokenizer so BLEU,
/// soft token matching, the labeler, and the entity extractor agree on
/// token boundaries.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Split into sentences on `.`, `!`, `?`, `;`, or a line break. Empty
/// fragments are dropped.
pub fn sentences(text: &str) -> Vec<String> {
    text.split(['.', '!', '?', ';', '\n'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}
