//! Object-overlap accuracy: a response is accurate when it mentions at
//! least one object actually present in the image.
//!
//! This is the lenient counterpart to CHAIR: it asks whether the response is
//! grounded at all, not whether everything in it is grounded.

use serde::{Deserialize, Serialize};

use super::vocab::{extract_objects, ObjectVocabulary};
use super::MetricsError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultitrustItem {
    pub response: String,
    pub ground_truth: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultitrustReport {
    pub accurate: u64,
    pub total: u64,
    /// `accurate / total`; higher is better.
    pub accuracy: f64,
}

/// Fraction of responses whose extracted objects intersect the ground
/// truth. Ground-truth names are folded through the vocabulary synonym map
/// before comparison.
pub fn multitrust_accuracy(
    items: &[MultitrustItem],
    vocab: &ObjectVocabulary,
) -> Result<MultitrustReport, MetricsError> {
    if items.is_empty() {
        return Err(MetricsError::EmptyItemSet);
    }
    let mut accurate = 0u64;
    for item in items {
        let mentioned = extract_objects(&item.response, vocab);
        let hit = item.ground_truth.iter().any(|name| {
            let canonical = vocab
                .canonicalize(name)
                .map(str::to_string)
                .unwrap_or_else(|| name.to_lowercase());
            mentioned.contains(&canonical)
        });
        if hit {
            accurate += 1;
        }
    }
    let total = items.len() as u64;
    Ok(MultitrustReport {
        accurate,
        total,
        accuracy: accurate as f64 / total as f64,
    })
}
