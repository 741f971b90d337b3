//! CHAIR: Caption Hallucination Assessment with Image Relevance.
//!
//! Two rates over a set of captions with ground-truth object annotations:
//!
//! - instance level: hallucinated object mentions / all object mentions,
//! - sentence level: captions with at least one hallucination / all captions.
//!
//! A mention is a distinct canonical object extracted from the caption; a
//! hallucination is a mention absent from that image's ground truth. Lower
//! is better for both.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::vocab::{extract_objects, ObjectVocabulary};
use super::MetricsError;

/// One caption and the objects actually present in its image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChairItem {
    pub caption: String,
    pub ground_truth: Vec<String>,
}

/// Extraction outcome for a single caption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChairItemBreakdown {
    pub mentioned: BTreeSet<String>,
    pub hallucinated: BTreeSet<String>,
}

/// CHAIR rates plus the raw counts they derive from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChairReport {
    /// Instance-level rate: hallucinated mentions over all mentions.
    pub chair_i: f64,
    /// Sentence-level rate: hallucinating captions over all captions.
    pub chair_s: f64,
    pub hallucinated_mentions: u64,
    pub total_mentions: u64,
    pub hallucinated_responses: u64,
    pub total_responses: u64,
    pub per_item: Vec<ChairItemBreakdown>,
}

/// Computes CHAIR over a non-empty item set.
///
/// Ground-truth names are folded through the vocabulary's synonym map, so
/// annotations written as "dogs" or "puppy" count as "dog". Captions that
/// mention no vocabulary object contribute nothing to the instance rate; if
/// no caption mentions anything at all, the instance rate is 0 by
/// convention.
pub fn chair_scores(
    items: &[ChairItem],
    vocab: &ObjectVocabulary,
) -> Result<ChairReport, MetricsError> {
    if items.is_empty() {
        return Err(MetricsError::EmptyItemSet);
    }

    let mut hallucinated_mentions = 0u64;
    let mut total_mentions = 0u64;
    let mut hallucinated_responses = 0u64;
    let mut per_item = Vec::with_capacity(items.len());

    for item in items {
        let mentioned = extract_objects(&item.caption, vocab);
        let truth: BTreeSet<String> = item
            .ground_truth
            .iter()
            .map(|name| {
                vocab
                    .canonicalize(name)
                    .map(str::to_string)
                    .unwrap_or_else(|| name.to_lowercase())
            })
            .collect();
        let hallucinated: BTreeSet<String> = mentioned
            .iter()
            .filter(|object| !truth.contains(*object))
            .cloned()
            .collect();

        total_mentions += mentioned.len() as u64;
        hallucinated_mentions += hallucinated.len() as u64;
        if !hallucinated.is_empty() {
            hallucinated_responses += 1;
        }
        per_item.push(ChairItemBreakdown {
            mentioned,
            hallucinated,
        });
    }

    let total_responses = items.len() as u64;
    let chair_i = if total_mentions == 0 {
        0.0
    } else {
        hallucinated_mentions as f64 / total_mentions as f64
    };
    let chair_s = hallucinated_responses as f64 / total_responses as f64;

    Ok(ChairReport {
        chair_i,
        chair_s,
        hallucinated_mentions,
        total_mentions,
        hallucinated_responses,
        total_responses,
        per_item,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab() -> ObjectVocabulary {
        ObjectVocabulary::new(
            ["dog", "cat", "bench", "car", "person"],
            [("dogs", "dog"), ("man", "person"), ("puppy", "dog")],
        )
        .unwrap()
    }

    fn item(caption: &str, truth: &[&str]) -> ChairItem {
        ChairItem {
            caption: caption.into(),
            ground_truth: truth.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn single_caption_with_one_hallucination() {
        let items = [item("A dog sits next to a cat.", &["dog", "bench"])];
        let report = chair_scores(&items, &vocab()).unwrap();
        assert_eq!(report.total_mentions, 2);
        assert_eq!(report.hallucinated_mentions, 1);
        assert_eq!(report.chair_i, 0.5);
        assert_eq!(report.chair_s, 1.0);
        assert_eq!(
            report.per_item[0].hallucinated.iter().collect::<Vec<_>>(),
            ["cat"]
        );
    }

    #[test]
    fn clean_captions_score_zero() {
        let items = [
            item("A dog on a bench.", &["dog", "bench"]),
            item("A man and his dog.", &["person", "dog"]),
        ];
        let report = chair_scores(&items, &vocab()).unwrap();
        assert_eq!(report.chair_i, 0.0);
        assert_eq!(report.chair_s, 0.0);
        assert_eq!(report.total_mentions, 4);
    }

    #[test]
    fn mixed_set_matches_hand_counts() {
        // Caption 1: mentions dog, cat; truth dog => 1 of 2 hallucinated.
        // Caption 2: mentions bench; truth bench => clean.
        // Caption 3: mentions car, person; truth person => 1 of 2.
        let items = [
            item("A dog chases a cat.", &["dog"]),
            item("An empty bench.", &["bench"]),
            item("A man beside a car.", &["person"]),
        ];
        let report = chair_scores(&items, &vocab()).unwrap();
        assert_eq!(report.total_mentions, 5);
        assert_eq!(report.hallucinated_mentions, 2);
        assert_eq!(report.chair_i, 2.0 / 5.0);
        assert_eq!(report.hallucinated_responses, 2);
        assert_eq!(report.chair_s, 2.0 / 3.0);
    }

    #[test]
    fn ground_truth_synonyms_are_canonicalized() {
        let items = [item("A puppy runs.", &["dogs"])];
        let report = chair_scores(&items, &vocab()).unwrap();
        assert_eq!(report.hallucinated_mentions, 0);
        assert_eq!(report.chair_s, 0.0);
    }

    #[test]
    fn caption_without_mentions_counts_as_clean_response() {
        let items = [item("blue sky over water", &["dog"])];
        let report = chair_scores(&items, &vocab()).unwrap();
        assert_eq!(report.total_mentions, 0);
        assert_eq!(report.chair_i, 0.0);
        assert_eq!(report.chair_s, 0.0);
    }

    #[test]
    fn empty_item_set_is_an_error() {
        assert_eq!(
            chair_scores(&[], &vocab()).unwrap_err(),
            MetricsError::EmptyItemSet
        );
    }

    proptest! {
        /// Rates stay in [0, 1] and agree with their raw counts.
        #[test]
        fn rates_are_consistent_with_counts(
            captions in proptest::collection::vec(
                proptest::collection::vec(
                    prop::sample::select(vec!["dog", "cat", "bench", "car", "sky", "blue"]),
                    1..6,
                ),
                1..8,
            ),
            truth in proptest::collection::vec(
                prop::sample::select(vec!["dog", "cat", "bench"]),
                0..3,
            ),
        ) {
            let items: Vec<ChairItem> = captions
                .iter()
                .map(|words| item(&words.join(" "), &truth.to_vec()))
                .collect();
            let report = chair_scores(&items, &vocab()).unwrap();
            prop_assert!((0.0..=1.0).contains(&report.chair_i));
            prop_assert!((0.0..=1.0).contains(&report.chair_s));
            prop_assert!(report.hallucinated_mentions <= report.total_mentions);
            prop_assert!(report.hallucinated_responses <= report.total_responses);
            prop_assert_eq!(report.total_responses, items.len() as u64);
            if report.total_mentions > 0 {
                prop_assert_eq!(
                    report.chair_i,
                    report.hallucinated_mentions as f64 / report.total_mentions as f64
                );
            }
        }

        /// Item order does not change the aggregate rates.
        #[test]
        fn order_invariant(seed in 0u64..500) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut items = vec![
                item("A dog chases a cat.", &["dog"]),
                item("An empty bench.", &["bench"]),
                item("A man beside a car.", &["person"]),
                item("blue sky", &[]),
            ];
            let base = chair_scores(&items, &vocab()).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            items.shuffle(&mut rng);
            let shuffled = chair_scores(&items, &vocab()).unwrap();
            prop_assert_eq!(base.chair_i, shuffled.chair_i);
            prop_assert_eq!(base.chair_s, shuffled.chair_s);
            prop_assert_eq!(base.total_mentions, shuffled.total_mentions);
        }
    }
}
