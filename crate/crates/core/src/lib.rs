//! Local perception search: inference-time, sentence-level candidate search
//! for multimodal generative models.
//!
//! Instead of decoding a caption token by token, the search samples several
//! candidate sentences per step and keeps the one whose embedding best
//! matches a self-generated "perception prior" (the model's own
//! region-by-region inventory of the image) combined with an image-text
//! alignment score. The crate is model-agnostic: generation, embedding, and
//! alignment scoring sit behind traits with HTTP and deterministic mock
//! implementations.
//!
//! Modules:
//!
//! - [`reward`]: embeddings, cosine similarity, weighted reward combination,
//!   argmax selection. Generic over the float width via [`scalar::Scalar`].
//! - [`segment`]: sentence boundary handling for step-wise decoding.
//! - [`providers`]: the three provider traits plus HTTP and mock backends.
//! - [`prior`]: perception-prior acquisition and caching.
//! - [`search`]: the decode loop (`lps`, `clip-prm` baseline, `greedy`).
//! - [`metrics`]: CHAIR, POPE, Multitrust, and BLEU with auditable reports.

pub mod metrics;
pub mod prior;
pub mod providers;
pub mod reward;
pub mod scalar;
pub mod search;
pub mod segment;

pub use scalar::Scalar;

/// Embedding over `f64`, the width used everywhere outside the generic
/// reward algebra.
pub type Embedding = reward::EmbeddingVector<f64>;
/// Reward weights over `f64`.
pub type Weights = reward::RewardWeights<f64>;
/// Per-candidate reward decomposition over `f64`.
pub type Breakdown = reward::RewardBreakdown<f64>;

pub use prior::{acquire_prior, PriorCache, PriorError, PriorText, LOCAL_PERCEPTION_PROMPT};
pub use providers::{
    CandidateGenerator, GenerationRequest, ImageRef, ImageTextScorer, ProviderDescriptor,
    ProviderError, ProviderKind, ProviderSet, RequestLimiter, SamplingParams, TextEmbedder,
};
pub use reward::{argmax_with_tiebreak, combine_reward, cosine_similarity, RewardError, TieBreak};
pub use search::{
    clip_prm_decode, decode_with_mode, greedy_decode, lps_decode, score_candidate, DecodeMode,
    DecodeResult, ScoredCandidate, SearchConfig, SearchError, StepRecord, Termination,
};
pub use segment::{join_steps, split_steps, truncate_at_boundary, StepText};
