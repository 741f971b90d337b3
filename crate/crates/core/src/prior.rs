//! Local perception prior: the model's own region-by-region inventory of an
//! image, embedded for later similarity scoring.
//!
//! Before decoding starts, the generator is asked once (greedy, temperature
//! zero) what it sees in each part of the image. Candidate sentences whose
//! embeddings align with that inventory get rewarded, which steers decoding
//! toward objects the model itself reported seeing and away from confabulated
//! ones. The prompt wording matters: it was tuned to elicit a flat object
//! listing rather than a narrative, and changing it changes the prior.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::providers::{
    CandidateGenerator, GenerationRequest, ImageRef, ProviderError, SamplingParams, TextEmbedder,
};
use crate::reward::RewardError;
use crate::Embedding;

/// The fixed question that elicits the perception prior.
pub const LOCAL_PERCEPTION_PROMPT: &str = "Please carefully observe the top, bottom, left, and \
                                           right parts of the image in sequence, and list the \
                                           objects present in each section.";

/// Generation cap for the prior inventory; generous enough for a four-region
/// object listing.
const PRIOR_MAX_NEW_UNITS: u32 = 256;

#[derive(Debug, Error)]
pub enum PriorError {
    #[error("model returned an empty perception prior for image {image_id}")]
    EmptyPrior { image_id: String },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("prior embedding failed: {0}")]
    Embedding(#[from] RewardError),
}

/// An acquired prior: the inventory text, its embedding, and enough context
/// (image identity, exact prompt) to audit or re-derive it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorText {
    /// Content hash of the image the prior describes.
    pub image_id: String,
    /// Exact prompt sent to the generator.
    pub prompt_used: String,
    /// The model's inventory, whitespace-trimmed.
    pub text: String,
    pub embedding: Embedding,
}

/// Asks the generator for the perception inventory and embeds it.
///
/// Decoding is greedy (temperature 0, full nucleus, single candidate) so the
/// prior is reproducible for a deterministic backend. A whitespace-only
/// answer is retried once, then reported as [`PriorError::EmptyPrior`].
pub fn acquire_prior(
    image: &ImageRef,
    generator: &dyn CandidateGenerator,
    embedder: &dyn TextEmbedder,
    prompt_override: Option<&str>,
) -> Result<PriorText, PriorError> {
    let image_id = image.identity().map_err(PriorError::Provider)?;
    let prompt = prompt_override.unwrap_or(LOCAL_PERCEPTION_PROMPT);
    let request = GenerationRequest {
        image: image.clone(),
        system_prompt: String::new(),
        user_prompt: prompt.to_string(),
        prefix: String::new(),
        k: 1,
        sampling: SamplingParams {
            max_new_units: PRIOR_MAX_NEW_UNITS,
            ..SamplingParams::greedy()
        },
        stop: None,
    };

    let mut text = String::new();
    for _ in 0..2 {
        let candidates = generator.generate_candidates(&request)?;
        text = candidates
            .first()
            .map(|c| c.trim().to_string())
            .unwrap_or_default();
        if !text.is_empty() {
            break;
        }
    }
    if text.is_empty() {
        return Err(PriorError::EmptyPrior { image_id });
    }

    let embedding = embedder.embed_text(&text)?;
    Ok(PriorText {
        image_id,
        prompt_used: prompt.to_string(),
        text,
        embedding,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct PriorKey {
    image_id: String,
    prompt: String,
    model_id: String,
}

/// Thread-safe prior cache keyed by (image content, prompt, generator model).
///
/// A batch run touches each image once per configuration, so priors are
/// acquired at most once and shared across worker threads. Acquisition runs
/// outside the lock; two threads racing on the same key may both compute, and
/// the later insert wins, which is harmless because acquisition is
/// deterministic per key for any reasonable backend.
#[derive(Default)]
pub struct PriorCache {
    entries: Mutex<HashMap<PriorKey, PriorText>>,
}

impl PriorCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Returns the cached prior for this (image, prompt, model) or acquires
    /// and caches it.
    pub fn get_or_acquire(
        &self,
        image: &ImageRef,
        generator: &dyn CandidateGenerator,
        embedder: &dyn TextEmbedder,
        prompt_override: Option<&str>,
    ) -> Result<PriorText, PriorError> {
        let key = PriorKey {
            image_id: image.identity().map_err(PriorError::Provider)?,
            prompt: prompt_override
                .unwrap_or(LOCAL_PERCEPTION_PROMPT)
                .to_string(),
            model_id: generator.model_id().to_string(),
        };
        if let Some(hit) = self
            .entries
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .get(&key)
        {
            return Ok(hit.clone());
        }
        let prior = acquire_prior(image, generator, embedder, prompt_override)?;
        self.entries
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert(key, prior.clone());
        Ok(prior)
    }
}
