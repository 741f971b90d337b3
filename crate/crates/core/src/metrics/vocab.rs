//! Object vocabulary and mention extraction.
//!
//! Hallucination metrics compare the objects a caption mentions against a
//! ground-truth object list. "Mentions" is defined by a vocabulary: a set of
//! canonical object names plus a synonym map from surface forms ("puppy",
//! "dogs") to their canonical name ("dog"). Extraction matches the longest
//! surface form first, so "dining table" is one mention of dining table, not
//! a mention of table.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::segment::tokenize;

/// On-disk vocabulary shape: a canonical list plus surface-to-canonical
/// synonym pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct VocabularyFile {
    canonical: Vec<String>,
    #[serde(default)]
    synonyms: HashMap<String, String>,
}

/// Validated, normalized object vocabulary.
///
/// All names are normalized the way captions are tokenized (lowercase,
/// punctuation dropped), so lookups are insensitive to case and punctuation.
/// Every canonical name matches itself; synonyms must point at a canonical
/// name.
#[derive(Debug, Clone)]
pub struct ObjectVocabulary {
    canonical: BTreeSet<String>,
    /// Normalized surface form (tokens joined by single spaces) to
    /// canonical name.
    surface_to_canonical: HashMap<String, String>,
    /// Longest surface form, in tokens.
    max_surface_tokens: usize,
}

fn normalize(name: &str) -> String {
    tokenize(name).join(" ")
}

impl ObjectVocabulary {
    pub fn new<S1, S2, S3>(
        canonical: impl IntoIterator<Item = S1>,
        synonyms: impl IntoIterator<Item = (S2, S3)>,
    ) -> Result<Self, MetricsError>
    where
        S1: AsRef<str>,
        S2: AsRef<str>,
        S3: AsRef<str>,
    {
        let mut canonical_set = BTreeSet::new();
        let mut surface_to_canonical = HashMap::new();
        let mut max_surface_tokens = 1;

        for name in canonical {
            let norm = normalize(name.as_ref());
            if norm.is_empty() {
                return Err(MetricsError::InvalidVocabulary(format!(
                    "canonical name {:?} is empty after normalization",
                    name.as_ref()
                )));
            }
            max_surface_tokens = max_surface_tokens.max(norm.split(' ').count());
            surface_to_canonical.insert(norm.clone(), norm.clone());
            canonical_set.insert(norm);
        }
        if canonical_set.is_empty() {
            return Err(MetricsError::InvalidVocabulary(
                "canonical list is empty".into(),
            ));
        }

        for (surface, target) in synonyms {
            let surface_norm = normalize(surface.as_ref());
            let target_norm = normalize(target.as_ref());
            if surface_norm.is_empty() {
                return Err(MetricsError::InvalidVocabulary(format!(
                    "synonym surface {:?} is empty after normalization",
                    surface.as_ref()
                )));
            }
            if !canonical_set.contains(&target_norm) {
                return Err(MetricsError::InvalidVocabulary(format!(
                    "synonym {:?} points at {:?}, which is not a canonical name",
                    surface.as_ref(),
                    target.as_ref()
                )));
            }
            if let Some(existing) = surface_to_canonical.get(&surface_norm) {
                if existing != &target_norm {
                    return Err(MetricsError::InvalidVocabulary(format!(
                        "surface {:?} maps to both {:?} and {:?}",
                        surface_norm, existing, target_norm
                    )));
                }
            }
            max_surface_tokens = max_surface_tokens.max(surface_norm.split(' ').count());
            surface_to_canonical.insert(surface_norm, target_norm);
        }

        Ok(Self {
            canonical: canonical_set,
            surface_to_canonical,
            max_surface_tokens,
        })
    }

    pub fn from_json_str(json: &str) -> Result<Self, MetricsError> {
        let file: VocabularyFile = serde_json::from_str(json)
            .map_err(|e| MetricsError::InvalidVocabulary(format!("bad JSON: {e}")))?;
        Self::new(file.canonical, file.synonyms)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MetricsError> {
        let json = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            MetricsError::InvalidVocabulary(format!("cannot read {}: {e}", path.as_ref().display()))
        })?;
        Self::from_json_str(&json)
    }

    /// The bundled MSCOCO 80-object vocabulary with plural and common-name
    /// synonyms.
    pub fn builtin() -> Self {
        Self::from_json_str(include_str!("../../data/coco_vocabulary.json"))
            .expect("bundled vocabulary must be valid")
    }

    pub fn canonical_names(&self) -> impl Iterator<Item = &str> {
        self.canonical.iter().map(String::as_str)
    }

    pub fn contains_canonical(&self, name: &str) -> bool {
        self.canonical.contains(&normalize(name))
    }

    /// Canonical name for a surface form, if the vocabulary knows it.
    pub fn canonicalize(&self, surface: &str) -> Option<&str> {
        self.surface_to_canonical
            .get(&normalize(surface))
            .map(String::as_str)
    }
}

/// Distinct canonical objects mentioned in a caption.
///
/// Greedy longest-match over the tokenized caption: at each position the
/// longest known surface form wins and consumes its tokens. The result is a
/// set; mentioning "a dog and another dog" yields one "dog".
pub fn extract_objects(caption: &str, vocab: &ObjectVocabulary) -> BTreeSet<String> {
    let tokens = tokenize(caption);
    let mut found = BTreeSet::new();
    let mut pos = 0;
    while pos < tokens.len() {
        let mut advanced = false;
        let longest = vocab.max_surface_tokens.min(tokens.len() - pos);
        for len in (1..=longest).rev() {
            let window = tokens[pos..pos + len].join(" ");
            if let Some(canonical) = vocab.surface_to_canonical.get(&window) {
                found.insert(canonical.clone());
                pos += len;
                advanced = true;
                break;
            }
        }
        if !advanced {
            pos += 1;
        }
    }
    found
}
