//! Reward algebra: embeddings, cosine similarity, and the weighted
//! combination of the perception-prior reward with the image-text score.
//!
//! Every candidate continuation is scored as
//!
//! ```text
//! combined = alpha * r_lps + beta * r_clip
//! ```
//!
//! where `r_lps` is the cosine similarity between the candidate embedding and
//! the perception-prior embedding, and `r_clip` is the image-text alignment
//! score. Selection is a plain argmax with an explicit tie-break policy so
//! that decoding is reproducible.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Errors from embedding construction and reward computation.
#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("embedding dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("embedding has zero norm; cosine similarity is undefined")]
    ZeroNormVector,
    #[error("embedding must contain at least one value")]
    EmptyEmbedding,
    #[error("embedding value at index {index} is not finite")]
    NonFiniteValue { index: usize },
    #[error("reward weights must be finite, non-negative, and not both zero")]
    InvalidWeights,
    #[error("reward component {name} = {value} is outside [-1, 1]")]
    RewardOutOfRange { name: &'static str, value: f64 },
    #[error("candidate set is empty")]
    EmptyCandidateSet,
    #[error("score at index {index} is not finite")]
    NonFiniteScore { index: usize },
}

/// A dense embedding with at least one finite value.
///
/// The invariant (non-empty, all values finite) is enforced at construction
/// and on deserialization, so downstream math never has to re-check it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    bound(
        serialize = "T: Serialize",
        deserialize = "T: serde::de::DeserializeOwned"
    ),
    try_from = "Vec<T>",
    into = "Vec<T>"
)]
pub struct EmbeddingVector<T: Scalar> {
    values: Vec<T>,
}

impl<T: Scalar> EmbeddingVector<T> {
    /// Builds an embedding, rejecting empty input and non-finite values.
    pub fn new(values: Vec<T>) -> Result<Self, RewardError> {
        if values.is_empty() {
            return Err(RewardError::EmptyEmbedding);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(RewardError::NonFiniteValue { index });
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Euclidean norm. Zero exactly when every value is zero.
    pub fn norm(&self) -> T {
        self.values
            .iter()
            .fold(T::zero(), |acc, &v| acc + v * v)
            .sqrt()
    }
}

impl<T: Scalar> TryFrom<Vec<T>> for EmbeddingVector<T> {
    type Error = RewardError;

    fn try_from(values: Vec<T>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl<T: Scalar> From<EmbeddingVector<T>> for Vec<T> {
    fn from(v: EmbeddingVector<T>) -> Self {
        v.values
    }
}

/// Cosine similarity between two embeddings of equal dimension.
///
/// The result is clamped to `[-1, 1]` to absorb float drift, so callers can
/// rely on the bound exactly. Fails on dimension mismatch and on zero-norm
/// input rather than guessing a value for an undefined similarity.
pub fn cosine_similarity<T: Scalar>(
    a: &EmbeddingVector<T>,
    b: &EmbeddingVector<T>,
) -> Result<T, RewardError> {
    if a.dim() != b.dim() {
        return Err(RewardError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == T::zero() || nb == T::zero() {
        return Err(RewardError::ZeroNormVector);
    }
    let dot = a
        .values()
        .iter()
        .zip(b.values())
        .fold(T::zero(), |acc, (&x, &y)| acc + x * y);
    Ok((dot / (na * nb)).min(T::one()).max(-T::one()))
}

/// Weights for combining the prior reward and the image-text score.
///
/// Both components default to weight 1, which is the configuration the
/// method was designed around. Setting `alpha = 0` degenerates to scoring by
/// image-text alignment alone; `beta = 0` scores by the prior alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights<T: Scalar> {
    pub alpha: T,
    pub beta: T,
}

impl<T: Scalar> RewardWeights<T> {
    /// Builds validated weights: finite, non-negative, not both zero.
    pub fn new(alpha: T, beta: T) -> Result<Self, RewardError> {
        let w = Self { alpha, beta };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        let ok = self.alpha.is_finite()
            && self.beta.is_finite()
            && self.alpha >= T::zero()
            && self.beta >= T::zero()
            && (self.alpha > T::zero() || self.beta > T::zero());
        if ok {
            Ok(())
        } else {
            Err(RewardError::InvalidWeights)
        }
    }
}

impl<T: Scalar> Default for RewardWeights<T> {
    fn default() -> Self {
        Self {
            alpha: T::one(),
            beta: T::one(),
        }
    }
}

/// Per-candidate reward decomposition kept alongside the combined value so
/// traces stay auditable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown<T: Scalar> {
    pub r_lps: T,
    pub r_clip: T,
    pub combined: T,
}

impl<T: Scalar> RewardBreakdown<T> {
    /// Combines validated components. Both must lie in `[-1, 1]`; cosine
    /// similarity and a well-behaved image-text scorer guarantee that, and
    /// anything outside it indicates a broken provider.
    pub fn compute(weights: &RewardWeights<T>, r_lps: T, r_clip: T) -> Result<Self, RewardError> {
        weights.validate()?;
        check_unit_range("r_lps", r_lps)?;
        check_unit_range("r_clip", r_clip)?;
        Ok(Self {
            r_lps,
            r_clip,
            combined: weights.alpha * r_lps + weights.beta * r_clip,
        })
    }
}

fn check_unit_range<T: Scalar>(name: &'static str, value: T) -> Result<(), RewardError> {
    if value.is_finite() && value >= -T::one() && value <= T::one() {
        Ok(())
    } else {
        Err(RewardError::RewardOutOfRange {
            name,
            value: value.to_f64().unwrap_or(f64::NAN),
        })
    }
}

/// Weighted combination `alpha * r_lps + beta * r_clip` with the same
/// validation as [`RewardBreakdown::compute`].
pub fn combine_reward<T: Scalar>(
    weights: &RewardWeights<T>,
    r_lps: T,
    r_clip: T,
) -> Result<T, RewardError> {
    RewardBreakdown::compute(weights, r_lps, r_clip).map(|b| b.combined)
}

/// Which candidate wins when combined scores tie exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    #[default]
    LowestIndex,
    HighestIndex,
}

/// Index of the maximum score under the given tie-break policy.
///
/// Rejects empty input and non-finite scores instead of silently picking an
/// arbitrary winner.
pub fn argmax_with_tiebreak<T: Scalar>(
    scores: &[T],
    tie_break: TieBreak,
) -> Result<usize, RewardError> {
    if scores.is_empty() {
        return Err(RewardError::EmptyCandidateSet);
    }
    if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
        return Err(RewardError::NonFiniteScore { index });
    }
    let mut best = 0usize;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        let replace = match tie_break {
            TieBreak::LowestIndex => s > scores[best],
            TieBreak::HighestIndex => s >= scores[best],
        };
        if replace {
            best = i;
        }
    }
    Ok(best)
}
