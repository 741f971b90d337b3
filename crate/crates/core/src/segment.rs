//! Sentence-level segmentation of raw model output.
//!
//! The search operates on one sentence per step. A step boundary is an
//! occurrence of the delimiter followed by whitespace or end of string, which
//! keeps things like "3.5 dollars" or "Dr. Smith went home" (with delimiter
//! ". ") intact. The delimiter stays part of the step text so the scored
//! sentence is exactly what the final caption will contain.

use serde::{Deserialize, Serialize};

/// One decoded step: a single sentence (or a trailing fragment).
///
/// `terminal` marks text with no step boundary, meaning the model produced
/// its natural end and the search should stop after selecting it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepText {
    pub text: String,
    pub terminal: bool,
}

impl StepText {
    pub fn is_empty(&self) -> bool {
        self.text.is_empty()
    }
}

/// Byte offset just past the first step boundary in `text`, if any.
///
/// A boundary is `delimiter` followed by whitespace or end of string. The
/// returned offset includes the delimiter itself.
fn boundary_end(text: &str, delimiter: &str) -> Option<usize> {
    assert!(!delimiter.is_empty(), "step delimiter must be non-empty");
    for (start, _) in text.match_indices(delimiter) {
        let after = start + delimiter.len();
        let followed_ok = text[after..]
            .chars()
            .next()
            .is_none_or(|c| c.is_whitespace());
        if followed_ok {
            return Some(after);
        }
    }
    None
}

/// Cuts raw sampled text down to its first step.
///
/// Leading whitespace is dropped. If the text contains a step boundary, the
/// step ends at (and includes) the delimiter and is not terminal; otherwise
/// the whole trimmed text is the step and it is terminal. Whitespace-only
/// input yields an empty terminal step, which the search treats as a
/// candidate to discard.
pub fn truncate_at_boundary(raw: &str, delimiter: &str) -> StepText {
    let trimmed = raw.trim_start();
    match boundary_end(trimmed, delimiter) {
        Some(end) => StepText {
            text: trimmed[..end].to_string(),
            terminal: false,
        },
        None => StepText {
            text: trimmed.trim_end().to_string(),
            terminal: true,
        },
    }
}

/// Joins selected steps into the running caption.
///
/// Empty steps are skipped and a single space separates adjacent steps, so
/// the result never has doubled or missing separators regardless of how the
/// model spaced its output.
pub fn join_steps<'a, I>(steps: I) -> String
where
    I: IntoIterator<Item = &'a StepText>,
{
    let mut out = String::new();
    for step in steps {
        let text = step.text.trim();
        if text.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(text);
    }
    out
}

/// Lowercased word tokens: maximal alphanumeric runs, punctuation dropped.
///
/// This is the normalization shared by the bag-of-words mock embedder and
/// object extraction, so both sides of a similarity or matching computation
/// see the same tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Splits a full text into consecutive steps by repeated truncation.
///
/// Useful for counting completed sentences in a decode prefix and for
/// round-trip testing against [`join_steps`].
pub fn split_steps(text: &str, delimiter: &str) -> Vec<StepText> {
    let mut steps = Vec::new();
    let mut rest = text;
    loop {
        let step = truncate_at_boundary(rest, delimiter);
        if step.is_empty() {
            break;
        }
        let consumed = (rest.len() - rest.trim_start().len()) + step.text.len();
        let terminal = step.terminal;
        steps.push(step);
        if terminal {
            break;
        }
        rest = &rest[consumed..];
    }
    steps
}
