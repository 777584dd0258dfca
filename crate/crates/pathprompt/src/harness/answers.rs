//! Answer-list parsing and the match-accuracy metric.

use super::HarnessError;

/// Parse generated text into an ordered answer list.
///
/// A bracketed, comma-separated list of (optionally quoted) items parses
/// item by item; anything else is one answer, whole and trimmed. Never fails.
pub fn parse_answer_list(text: &str) -> Vec<String> {
    let trimmed = text.trim();
    if let Some(inner) = trimmed.strip_prefix('[').and_then(|t| t.strip_suffix(']')) {
        return inner
            .split(',')
            .map(|item| item.trim().trim_matches(|c| matches!(c, '"' | '\'' | '\u{2018}' | '\u{2019}' | '\u{201c}' | '\u{201d}')).trim().to_string())
            .filter(|item| !item.is_empty())
            .collect();
    }
    if trimmed.is_empty() {
        return Vec::new();
    }
    vec![trimmed.to_string()]
}

/// Lowercase, trim, collapse internal whitespace and strip surrounding
/// punctuation.
pub fn normalize_answer(s: &str) -> String {
    let lowered = s.to_lowercase();
    let collapsed: Vec<&str> = lowered.split_whitespace().collect();
    collapsed.join(" ").trim_matches(|c: char| c.is_ascii_punctuation()).trim().to_string()
}

/// 1 when the first predicted answer, normalized, is in the normalized gold
/// set; 0 otherwise (including an empty prediction). Empty gold errors.
pub fn hits_at_1(predicted: &[String], gold: &[String]) -> Result<u8, HarnessError> {
    if gold.is_empty() {
        return Err(HarnessError::EmptyGold);
    }
    let Some(first) = predicted.first() else {
        return Ok(0);
    };
    let first = normalize_answer(first);
    Ok(gold.iter().any(|g| normalize_answer(g) == first) as u8)
}
