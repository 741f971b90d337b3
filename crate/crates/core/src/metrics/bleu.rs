//! BLEU: modified n-gram precision with a brevity penalty.
//!
//! Captions are compared as whitespace token sequences (case-sensitive,
//! punctuation left alone). Candidate n-gram counts are clipped to the
//! maximum count in any single reference, precisions are combined by a
//! geometric mean with uniform weights, and candidates shorter than the
//! closest reference are penalized by `exp(1 - r/c)`. Orders the candidate
//! is too short to have (a 3-token candidate has no 4-grams) are skipped
//! rather than zeroing the score.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::MetricsError;

const MAX_SUPPORTED_ORDER: usize = 4;

fn validate_order(max_n: usize) -> Result<(), MetricsError> {
    if (1..=MAX_SUPPORTED_ORDER).contains(&max_n) {
        Ok(())
    } else {
        Err(MetricsError::InvalidBleuOrder { got: max_n })
    }
}

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped matching n-grams and total candidate n-grams for one order.
fn clipped_and_total(candidate: &[&str], references: &[Vec<&str>], n: usize) -> (u64, u64) {
    let cand_counts = ngram_counts(candidate, n);
    let total: u64 = cand_counts.values().sum();
    if total == 0 {
        return (0, 0);
    }
    let ref_counts: Vec<HashMap<&[&str], u64>> = references
        .iter()
        .map(|r| ngram_counts(r.as_slice(), n))
        .collect();
    let clipped = cand_counts
        .iter()
        .map(|(gram, &count)| {
            let best_ref = ref_counts
                .iter()
                .map(|rc| rc.get(gram).copied().unwrap_or(0))
                .max()
                .unwrap_or(0);
            count.min(best_ref)
        })
        .sum();
    (clipped, total)
}

/// Reference length closest to the candidate length; ties go to the shorter
/// reference.
fn closest_reference_length(candidate_len: usize, reference_lens: &[usize]) -> usize {
    let mut best = reference_lens[0];
    for &len in &reference_lens[1..] {
        let better = (len.abs_diff(candidate_len), len) < (best.abs_diff(candidate_len), best);
        if better {
            best = len;
        }
    }
    best
}

fn brevity_penalty(candidate_len: u64, reference_len: u64) -> f64 {
    if candidate_len >= reference_len {
        1.0
    } else {
        (1.0 - reference_len as f64 / candidate_len as f64).exp()
    }
}

fn combine_precisions(per_order: &[(u64, u64)], candidate_len: u64, reference_len: u64) -> f64 {
    // Only orders where the candidate has n-grams participate; uniform
    // weights over the participating orders.
    let active: Vec<&(u64, u64)> = per_order.iter().filter(|(_, total)| *total > 0).collect();
    if active.is_empty() {
        return 0.0;
    }
    if active.iter().any(|(clipped, _)| *clipped == 0) {
        return 0.0;
    }
    let log_sum: f64 = active
        .iter()
        .map(|(clipped, total)| (*clipped as f64 / *total as f64).ln())
        .sum();
    let geometric_mean = (log_sum / active.len() as f64).exp();
    brevity_penalty(candidate_len, reference_len) * geometric_mean
}

/// Sentence-level BLEU of `candidate` against one or more references.
///
/// `max_n` in 1..=4 selects the largest n-gram order. Empty candidates or
/// references (no tokens) are an error rather than silently scoring zero.
pub fn bleu<S: AsRef<str>>(
    candidate: &str,
    references: &[S],
    max_n: usize,
) -> Result<f64, MetricsError> {
    validate_order(max_n)?;
    let cand_tokens: Vec<&str> = candidate.split_whitespace().collect();
    if cand_tokens.is_empty() || references.is_empty() {
        return Err(MetricsError::EmptyText);
    }
    let ref_tokens: Vec<Vec<&str>> = references
        .iter()
        .map(|r| r.as_ref().split_whitespace().collect())
        .collect();
    if ref_tokens.iter().any(|r: &Vec<&str>| r.is_empty()) {
        return Err(MetricsError::EmptyText);
    }

    let per_order: Vec<(u64, u64)> = (1..=max_n)
        .map(|n| clipped_and_total(&cand_tokens, &ref_tokens, n))
        .collect();
    let ref_lens: Vec<usize> = ref_tokens.iter().map(Vec::len).collect();
    let r = closest_reference_length(cand_tokens.len(), &ref_lens);
    Ok(combine_precisions(
        &per_order,
        cand_tokens.len() as u64,
        r as u64,
    ))
}

/// Corpus-level accumulator: n-gram statistics and lengths are summed over
/// sentences, then combined once, the standard corpus BLEU definition.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct CorpusBleu {
    clipped: [u64; MAX_SUPPORTED_ORDER],
    totals: [u64; MAX_SUPPORTED_ORDER],
    candidate_len: u64,
    reference_len: u64,
    sentences: u64,
}

impl CorpusBleu {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn sentences(&self) -> u64 {
        self.sentences
    }

    pub fn add<S: AsRef<str>>(
        &mut self,
        candidate: &str,
        references: &[S],
    ) -> Result<(), MetricsError> {
        let cand_tokens: Vec<&str> = candidate.split_whitespace().collect();
        if cand_tokens.is_empty() || references.is_empty() {
            return Err(MetricsError::EmptyText);
        }
        let ref_tokens: Vec<Vec<&str>> = references
            .iter()
            .map(|r| r.as_ref().split_whitespace().collect())
            .collect();
        if ref_tokens.iter().any(|r: &Vec<&str>| r.is_empty()) {
            return Err(MetricsError::EmptyText);
        }
        for n in 1..=MAX_SUPPORTED_ORDER {
            let (clipped, total) = clipped_and_total(&cand_tokens, &ref_tokens, n);
            self.clipped[n - 1] += clipped;
            self.totals[n - 1] += total;
        }
        let ref_lens: Vec<usize> = ref_tokens.iter().map(Vec::len).collect();
        self.candidate_len += cand_tokens.len() as u64;
        self.reference_len += closest_reference_length(cand_tokens.len(), &ref_lens) as u64;
        self.sentences += 1;
        Ok(())
    }

    pub fn score(&self, max_n: usize) -> Result<f64, MetricsError> {
        validate_order(max_n)?;
        if self.sentences == 0 {
            return Err(MetricsError::EmptyItemSet);
        }
        let per_order: Vec<(u64, u64)> = (0..max_n)
            .map(|i| (self.clipped[i], self.totals[i]))
            .collect();
        Ok(combine_precisions(
            &per_order,
            self.candidate_len,
            self.reference_len,
        ))
    }

    pub fn report(&self) -> Result<BleuReport, MetricsError> {
        Ok(BleuReport {
            bleu_1: self.score(1)?,
            bleu_4: self.score(4)?,
            sentences: self.sentences,
            candidate_tokens: self.candidate_len,
            reference_tokens: self.reference_len,
        })
    }
}

/// Corpus BLEU at orders 1 and 4 with the underlying sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    pub bleu_1: f64,
    pub bleu_4: f64,
    pub sentences: u64,
    pub candidate_tokens: u64,
    pub reference_tokens: u64,
}
