//! Parsers for free-text VLM replies.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// A missing concept and the stand-alone caption used to retrieve it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptCaption {
    pub concept: String,
    pub caption: String,
}

/// Reads a yes/no answer from the leading word, ignoring case and punctuation.
pub fn parse_yes_no(response: &str) -> Option<bool> {
    let start = response.trim_start_matches(|c: char| !c.is_alphanumeric());
    let word: String = start
        .chars()
        .take_while(|c| c.is_alphabetic())
        .flat_map(char::to_lowercase)
        .collect();
    match word.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

/// The refusal phrasing that triggers another attempt at a higher temperature.
pub fn is_refusal(response: &str) -> bool {
    response.to_lowercase().contains("unable to respond")
}

/// Strips bullets (`-`, `*`, `•`, `+`) and list numbering (`1.`, `2)`, `(3)`).
pub fn clean_line(line: &str) -> &str {
    let mut s = line.trim();
    loop {
        let before = s;
        s = s.trim_start_matches(['-', '*', '•', '+', '–']).trim_start();
        if let Some(rest) = strip_numbering(s) {
            s = rest.trim_start();
        }
        if s == before {
            break;
        }
    }
    s.trim_end()
}

fn strip_numbering(s: &str) -> Option<&str> {
    let inner = s.strip_prefix('(').unwrap_or(s);
    let digits = inner.chars().take_while(char::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let rest = &inner[digits..];
    rest.strip_prefix('.')
        .or_else(|| rest.strip_prefix(')'))
        .filter(|r| r.is_empty() || r.starts_with(char::is_whitespace))
}

/// Non-empty cleaned lines of a reply, in order.
pub fn reply_lines(response: &str) -> Vec<String> {
    response
        .lines()
        .map(clean_line)
        .filter(|l| !l.is_empty())
        .map(ToString::to_string)
        .collect()
}

/// Missing concepts from a reply, keeping at most `max_concepts`.
///
/// A refusal yields an empty list.
pub fn parse_concepts(response: &str, max_concepts: usize) -> Vec<String> {
    if is_refusal(response) {
        return Vec::new();
    }
    let mut lines = reply_lines(response);
    lines.truncate(max_concepts);
    lines
}

/// Captions paired with concepts by line order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionPairing {
    pub pairs: Vec<ConceptCaption>,
    /// Set when the reply had a different number of caption lines than concepts.
    pub count_mismatch: bool,
}

pub fn pair_captions(concepts: &[String], response: &str) -> CaptionPairing {
    let captions = if is_refusal(response) {
        Vec::new()
    } else {
        reply_lines(response)
    };
    let count_mismatch = captions.len() != concepts.len();
    let pairs = concepts
        .iter()
        .zip(captions)
        .map(|(concept, caption)| ConceptCaption {
            concept: concept.clone(),
            caption,
        })
        .collect();
    CaptionPairing { pairs, count_mismatch }
}
