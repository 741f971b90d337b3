//! Sentence-level candidate search over a generative model.
//!
//! Each decode step samples up to `k` candidate continuations, truncates
//! them to one sentence, scores every candidate against the perception prior
//! (cosine similarity of embeddings) and the image (alignment score), and
//! greedily keeps the argmax of the weighted combination. The loop stops on
//! a terminal candidate, on the step budget, or when the generator stops
//! producing usable candidates. Everything scored along the way is recorded
//! so a run can be audited or re-verified offline.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prior::{acquire_prior, PriorCache, PriorError, PriorText};
use crate::providers::{GenerationRequest, ImageRef, ProviderError, ProviderSet, SamplingParams};
use crate::reward::{argmax_with_tiebreak, RewardError, TieBreak};
use crate::segment::{join_steps, truncate_at_boundary, StepText};
use crate::{Breakdown, Weights};

/// Tunables for one decode run. The defaults reproduce the reference setup:
/// equal reward weights, six candidates per step, ten steps, period
/// delimiter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub weights: Weights,
    /// Candidates sampled per step.
    pub k: usize,
    /// Step budget; decoding never runs longer.
    pub max_steps: usize,
    /// Sentence delimiter defining step boundaries.
    pub delimiter: String,
    pub tie_break: TieBreak,
    /// Reserved discount for multi-step lookahead. Selection is single-step
    /// greedy, so this currently has no effect; it is accepted and recorded
    /// so traces stay forward-compatible.
    pub gamma: f64,
    pub sampling: SamplingParams,
    /// Score `join(prefix, candidate)` instead of the candidate sentence
    /// alone. Off by default: per-sentence scoring is cheaper and is the
    /// reference behavior.
    pub score_with_prefix: bool,
    /// System prompt forwarded to the generator; empty means none.
    pub system_prompt: String,
    /// Replacement for the built-in perception-prior prompt, if set.
    pub prior_prompt: Option<String>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            weights: Weights::default(),
            k: 6,
            max_steps: 10,
            delimiter: ".".into(),
            tie_break: TieBreak::default(),
            gamma: 1.0,
            sampling: SamplingParams::default(),
            score_with_prefix: false,
            system_prompt: String::new(),
            prior_prompt: None,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.k == 0 {
            return Err(SearchError::InvalidConfig("k must be at least 1".into()));
        }
        if self.max_steps == 0 {
            return Err(SearchError::InvalidConfig(
                "max_steps must be at least 1".into(),
            ));
        }
        if self.delimiter.is_empty() {
            return Err(SearchError::InvalidConfig(
                "delimiter must be non-empty".into(),
            ));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(SearchError::InvalidConfig(
                "gamma must lie in (0, 1]".into(),
            ));
        }
        self.weights
            .validate()
            .map_err(|e| SearchError::InvalidConfig(e.to_string()))?;
        self.sampling
            .validate()
            .map_err(|e| SearchError::InvalidConfig(e.to_string()))?;
        if let Some(prompt) = &self.prior_prompt {
            if prompt.trim().is_empty() {
                return Err(SearchError::InvalidConfig(
                    "prior_prompt override must be non-empty".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Why a decode run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The selected candidate had no further step boundary.
    Eos,
    MaxSteps,
    /// The generator produced no usable (non-empty, deduplicated)
    /// candidates.
    ProviderExhausted,
}

/// Selection strategy. `lps` is the full method; `clip-prm` is the baseline
/// that scores by image-text alignment alone; `greedy` samples a single
/// candidate per step so selection is trivial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DecodeMode {
    #[default]
    Lps,
    ClipPrm,
    Greedy,
}

impl std::fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DecodeMode::Lps => write!(f, "lps"),
            DecodeMode::ClipPrm => write!(f, "clip-prm"),
            DecodeMode::Greedy => write!(f, "greedy"),
        }
    }
}

impl std::str::FromStr for DecodeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lps" => Ok(DecodeMode::Lps),
            "clip-prm" => Ok(DecodeMode::ClipPrm),
            "greedy" => Ok(DecodeMode::Greedy),
            other => Err(format!(
                "unknown decode mode {other:?}; expected lps, clip-prm, or greedy"
            )),
        }
    }
}

/// One candidate as scored: the truncated step text plus its reward
/// decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub text: StepText,
    pub reward: Breakdown,
}

/// Everything that happened in one decode step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based position in the decode.
    pub step_index: usize,
    /// All scored candidates, in generation order after empty-drop and
    /// exact-duplicate removal. Never empty.
    pub candidates: Vec<ScoredCandidate>,
    /// Index into `candidates` of the winner.
    pub selected: usize,
}

impl StepRecord {
    pub fn selected_candidate(&self) -> &ScoredCandidate {
        &self.candidates[self.selected]
    }
}

/// A completed decode with its full audit trail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub final_text: String,
    pub steps: Vec<StepRecord>,
    pub prior: PriorText,
    /// The configuration that actually ran (after any mode adjustments).
    pub config_snapshot: SearchConfig,
    pub terminated_by: Termination,
}

impl DecodeResult {
    /// The selected step texts in order.
    pub fn selected_steps(&self) -> impl Iterator<Item = &StepText> {
        self.steps.iter().map(|s| &s.selected_candidate().text)
    }
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search configuration: {0}")]
    InvalidConfig(String),
    #[error("prior acquisition failed: {0}")]
    Prior(#[from] PriorError),
    #[error("candidate generation failed at step {step}: {source}")]
    Generation {
        step: usize,
        #[source]
        source: ProviderError,
    },
    #[error("scoring failed at step {step}, candidate {candidate}: {source}")]
    Scoring {
        step: usize,
        candidate: usize,
        #[source]
        source: ScoreError,
    },
}

/// A single candidate's scoring failure: either a provider call or the
/// reward math.
#[derive(Debug, Error)]
pub enum ScoreError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

/// Breakdown used for empty candidates so they can never win a step.
pub fn empty_candidate_sentinel() -> Breakdown {
    Breakdown {
        r_lps: -1.0,
        r_clip: -1.0,
        combined: f64::NEG_INFINITY,
    }
}

/// Scores one candidate sentence against the prior and the image.
///
/// Empty candidates get the floor sentinel instead of an error; everything
/// else is embedded, compared to the prior embedding by cosine similarity,
/// scored for image-text alignment, and combined with the given weights.
pub fn score_candidate(
    candidate: &StepText,
    prior: &PriorText,
    image: &ImageRef,
    weights: &Weights,
    providers: &ProviderSet,
) -> Result<Breakdown, ScoreError> {
    if candidate.text.trim().is_empty() {
        return Ok(empty_candidate_sentinel());
    }
    score_text(&candidate.text, prior, image, weights, providers)
}

fn score_text(
    text: &str,
    prior: &PriorText,
    image: &ImageRef,
    weights: &Weights,
    providers: &ProviderSet,
) -> Result<Breakdown, ScoreError> {
    let embedding = providers.embedder.embed_text(text)?;
    let r_lps = crate::reward::cosine_similarity(&prior.embedding, &embedding)?;
    let r_clip = providers.scorer.score_image_text(image, text)?;
    Ok(Breakdown::compute(weights, r_lps, r_clip)?)
}

/// Full local-perception search: prior-guided candidate selection.
pub fn lps_decode(
    image: &ImageRef,
    task_prompt: &str,
    config: &SearchConfig,
    providers: &ProviderSet,
    cache: Option<&PriorCache>,
) -> Result<DecodeResult, SearchError> {
    decode_with_mode(
        DecodeMode::Lps,
        image,
        task_prompt,
        config,
        providers,
        cache,
    )
}

/// Baseline that ignores the prior: selection by image-text alignment only
/// (weights forced to alpha 0, beta 1). Identical loop otherwise, so the two
/// modes differ in exactly one variable.
pub fn clip_prm_decode(
    image: &ImageRef,
    task_prompt: &str,
    config: &SearchConfig,
    providers: &ProviderSet,
    cache: Option<&PriorCache>,
) -> Result<DecodeResult, SearchError> {
    decode_with_mode(
        DecodeMode::ClipPrm,
        image,
        task_prompt,
        config,
        providers,
        cache,
    )
}

/// Single-candidate decoding (k forced to 1); selection is trivial but steps
/// are still scored and recorded so traces stay comparable.
pub fn greedy_decode(
    image: &ImageRef,
    task_prompt: &str,
    config: &SearchConfig,
    providers: &ProviderSet,
    cache: Option<&PriorCache>,
) -> Result<DecodeResult, SearchError> {
    decode_with_mode(
        DecodeMode::Greedy,
        image,
        task_prompt,
        config,
        providers,
        cache,
    )
}

/// Applies the mode's overrides to a base configuration.
pub fn effective_config(mode: DecodeMode, config: &SearchConfig) -> SearchConfig {
    let mut effective = config.clone();
    match mode {
        DecodeMode::Lps => {}
        DecodeMode::ClipPrm => {
            effective.weights = Weights {
                alpha: 0.0,
                beta: 1.0,
            };
        }
        DecodeMode::Greedy => {
            effective.k = 1;
        }
    }
    effective
}

/// Runs the decode loop under the given mode.
pub fn decode_with_mode(
    mode: DecodeMode,
    image: &ImageRef,
    task_prompt: &str,
    config: &SearchConfig,
    providers: &ProviderSet,
    cache: Option<&PriorCache>,
) -> Result<DecodeResult, SearchError> {
    let config = effective_config(mode, config);
    config.validate()?;

    let prompt_override = config.prior_prompt.as_deref();
    let prior = match cache {
        Some(cache) => cache.get_or_acquire(
            image,
            providers.generator.as_ref(),
            providers.embedder.as_ref(),
            prompt_override,
        )?,
        None => acquire_prior(
            image,
            providers.generator.as_ref(),
            providers.embedder.as_ref(),
            prompt_override,
        )?,
    };

    let mut steps: Vec<StepRecord> = Vec::new();
    let mut selected_texts: Vec<StepText> = Vec::new();
    let mut terminated_by = Termination::MaxSteps;

    for step_index in 1..=config.max_steps {
        let prefix = join_steps(&selected_texts);
        let request = GenerationRequest {
            image: image.clone(),
            system_prompt: config.system_prompt.clone(),
            user_prompt: task_prompt.to_string(),
            prefix: prefix.clone(),
            k: config.k,
            sampling: config.sampling.clone(),
            stop: Some(config.delimiter.clone()),
        };
        let raw = providers
            .generator
            .generate_candidates(&request)
            .map_err(|source| SearchError::Generation {
                step: step_index,
                source,
            })?;

        let mut seen = HashSet::new();
        let mut candidates: Vec<ScoredCandidate> = Vec::new();
        for raw_text in raw.iter().take(config.k) {
            let step_text = truncate_at_boundary(raw_text, &config.delimiter);
            if step_text.is_empty() {
                continue;
            }
            if !seen.insert(step_text.text.clone()) {
                continue;
            }
            let scored_text = if config.score_with_prefix {
                let mut with_candidate = selected_texts.clone();
                with_candidate.push(step_text.clone());
                join_steps(&with_candidate)
            } else {
                step_text.text.clone()
            };
            let reward = score_text(&scored_text, &prior, image, &config.weights, providers)
                .map_err(|source| SearchError::Scoring {
                    step: step_index,
                    candidate: candidates.len(),
                    source,
                })?;
            candidates.push(ScoredCandidate {
                text: step_text,
                reward,
            });
        }

        if candidates.is_empty() {
            terminated_by = Termination::ProviderExhausted;
            break;
        }

        let combined: Vec<f64> = candidates.iter().map(|c| c.reward.combined).collect();
        let selected = argmax_with_tiebreak(&combined, config.tie_break).map_err(|source| {
            SearchError::Scoring {
                step: step_index,
                candidate: 0,
                source: ScoreError::Reward(source),
            }
        })?;

        let winner_terminal = candidates[selected].text.terminal;
        selected_texts.push(candidates[selected].text.clone());
        steps.push(StepRecord {
            step_index,
            candidates,
            selected,
        });

        if winner_terminal {
            terminated_by = Termination::Eos;
            break;
        }
    }

    Ok(DecodeResult {
        final_text: join_steps(&selected_texts),
        steps,
        prior,
        config_snapshot: config,
        terminated_by,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::LOCAL_PERCEPTION_PROMPT;
    use crate::providers::mock::{AfterScript, BagOfWordsEmbedder, MockGenerator, MockScorer};
    use proptest::prelude::*;
    use std::sync::Arc;

    const VOCAB: [&str; 15] = [
        "a", "dog", "on", "grass", "stands", "cat", "sleeps", "truck", "parked", "the", "runs",
        "is", "green", "sky", "blue",
    ];
    const PRIOR_TEXT: &str = "a dog on grass";

    fn image() -> ImageRef {
        ImageRef::from_bytes(vec![1, 2, 3, 4], "image/png").unwrap()
    }

    fn providers(generator: MockGenerator, scorer: MockScorer) -> ProviderSet {
        ProviderSet {
            generator: Arc::new(generator.respond_to(LOCAL_PERCEPTION_PROMPT, PRIOR_TEXT)),
            embedder: Arc::new(BagOfWordsEmbedder::new(VOCAB)),
            scorer: Arc::new(scorer),
        }
    }

    /// Expected cosine against the prior for hand-counted token overlaps:
    /// dot / (2 * sqrt(candidate_token_count)), prior norm being 2.
    fn prior_cosine(dot: f64, candidate_sq_norm: f64) -> f64 {
        dot / (2.0 * candidate_sq_norm.sqrt())
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn selects_the_prior_aligned_candidate() {
        let generator = MockGenerator::scripted(vec![vec![
            "A dog stands on grass.",
            "A cat sleeps.",
            "A truck parked.",
        ]]);
        let set = providers(generator, MockScorer::with_default(0.5));
        let config = SearchConfig {
            max_steps: 1,
            ..SearchConfig::default()
        };
        let result = lps_decode(&image(), "Describe this image.", &config, &set, None).unwrap();

        assert_eq!(result.steps.len(), 1);
        let step = &result.steps[0];
        assert_eq!(step.selected, 0);
        assert_eq!(step.candidates.len(), 3);
        assert_eq!(result.final_text, "A dog stands on grass.");
        assert_eq!(result.terminated_by, Termination::MaxSteps);

        // "A dog stands on grass.": 4 shared tokens, 5 distinct-token mass.
        let r = &step.candidates[0].reward;
        assert!(close(r.r_lps, prior_cosine(4.0, 5.0)));
        assert!(close(r.r_lps, 0.894_427_190_999_915_9));
        assert_eq!(r.r_clip, 0.5);
        assert!(close(r.combined, r.r_lps + 0.5));
        // "A cat sleeps." and "A truck parked." each share only "a".
        assert!(close(
            step.candidates[1].reward.r_lps,
            prior_cosine(1.0, 3.0)
        ));
        assert!(close(
            step.candidates[2].reward.r_lps,
            prior_cosine(1.0, 3.0)
        ));
    }

    #[test]
    fn multi_step_decode_runs_to_natural_end() {
        let generator = MockGenerator::scripted(vec![
            vec!["A dog stands on grass.", "A cat sleeps.", "A truck parked."],
            vec![
                "The grass is green.",
                "A dog runs on the grass.",
                "The sky is blue.",
            ],
            vec![
                "A cat sleeps",
                "The dog sleeps on the grass",
                "A truck parked.",
            ],
        ]);
        let set = providers(generator, MockScorer::with_default(0.5));
        let result = lps_decode(
            &image(),
            "Describe this image.",
            &SearchConfig::default(),
            &set,
            None,
        )
        .unwrap();

        let selections: Vec<usize> = result.steps.iter().map(|s| s.selected).collect();
        assert_eq!(selections, vec![0, 1, 1]);
        assert_eq!(
            result.final_text,
            "A dog stands on grass. A dog runs on the grass. The dog sleeps on the grass"
        );
        assert_eq!(result.terminated_by, Termination::Eos);

        // Step 2 winner: "A dog runs on the grass." shares 4 tokens over
        // 6 distinct tokens.
        let step2 = &result.steps[1];
        assert!(close(
            step2.candidates[1].reward.r_lps,
            prior_cosine(4.0, 6.0)
        ));
        // Step 3 winner: "The dog sleeps on the grass" has squared token
        // mass 8 ("the" twice) and overlap 3.
        let step3 = &result.steps[2];
        assert!(close(
            step3.candidates[1].reward.r_lps,
            prior_cosine(3.0, 8.0)
        ));
        // The terminal winner ends the decode.
        assert!(step3.candidates[1].text.terminal);
    }

    #[test]
    fn step_budget_caps_the_decode() {
        let generator = MockGenerator::scripted(vec![vec!["A dog runs."]])
            .after_script(AfterScript::RepeatLast);
        let set = providers(generator, MockScorer::with_default(0.2));
        let result = lps_decode(
            &image(),
            "Describe this image.",
            &SearchConfig::default(),
            &set,
            None,
        )
        .unwrap();
        assert_eq!(result.steps.len(), 10);
        assert_eq!(result.terminated_by, Termination::MaxSteps);
        assert_eq!(result.final_text, "A dog runs. ".repeat(10).trim_end());
        for (i, step) in result.steps.iter().enumerate() {
            assert_eq!(step.step_index, i + 1);
        }
    }

    #[test]
    fn k_of_one_degenerates_to_greedy_with_scoring() {
        let generator = MockGenerator::scripted(vec![
            vec!["A dog runs.", "ignored because k is 1."],
            vec!["The grass is green."],
        ]);
        let set = providers(generator, MockScorer::with_default(0.3));
        let config = SearchConfig {
            k: 1,
            ..SearchConfig::default()
        };
        let result = lps_decode(&image(), "Describe.", &config, &set, None).unwrap();
        assert_eq!(result.steps.len(), 2);
        for step in &result.steps {
            assert_eq!(step.candidates.len(), 1);
            assert_eq!(step.selected, 0);
        }
        assert_eq!(result.terminated_by, Termination::ProviderExhausted);
        assert_eq!(result.final_text, "A dog runs. The grass is green.");
    }

    #[test]
    fn greedy_mode_forces_k_to_one() {
        let generator = MockGenerator::scripted(vec![vec!["A dog runs.", "A cat sleeps."]]);
        let set = providers(generator, MockScorer::with_default(0.0));
        let config = SearchConfig {
            max_steps: 1,
            ..SearchConfig::default()
        };
        let result = greedy_decode(&image(), "Describe.", &config, &set, None).unwrap();
        assert_eq!(result.config_snapshot.k, 1);
        assert_eq!(result.steps[0].candidates.len(), 1);
        assert_eq!(result.final_text, "A dog runs.");
    }

    #[test]
    fn clip_prm_ignores_the_prior() {
        // The scorer mildly prefers the prior-misaligned sentence; with the
        // prior active the grounded sentence still wins.
        let img = image();
        let generator =
            || MockGenerator::scripted(vec![vec!["A dog stands on grass", "A cat sleeps"]]);
        let scorer = || MockScorer::with_default(0.1).pair(&img, "A cat sleeps", 0.6);
        let config = SearchConfig::default();

        let lps = lps_decode(
            &img,
            "Describe.",
            &config,
            &providers(generator(), scorer()),
            None,
        )
        .unwrap();
        assert_eq!(lps.final_text, "A dog stands on grass");
        assert_eq!(lps.terminated_by, Termination::Eos);

        let baseline = clip_prm_decode(
            &img,
            "Describe.",
            &config,
            &providers(generator(), scorer()),
            None,
        )
        .unwrap();
        assert_eq!(baseline.final_text, "A cat sleeps");
        assert_eq!(baseline.config_snapshot.weights.alpha, 0.0);
        assert_eq!(baseline.config_snapshot.weights.beta, 1.0);

        // And zeroed-alpha weights reproduce the baseline exactly.
        let zeroed = lps_decode(
            &img,
            "Describe.",
            &SearchConfig {
                weights: Weights {
                    alpha: 0.0,
                    beta: 1.0,
                },
                ..config
            },
            &providers(generator(), scorer()),
            None,
        )
        .unwrap();
        assert_eq!(zeroed.final_text, baseline.final_text);
        assert_eq!(zeroed.steps, baseline.steps);
    }

    #[test]
    fn empty_candidates_are_dropped_not_scored() {
        let generator = MockGenerator::scripted(vec![vec![
            "",
            "   ",
            "A dog runs.",
            "A dog runs.",
            "A cat sleeps.",
        ]]);
        let set = providers(generator, MockScorer::with_default(0.0));
        let config = SearchConfig {
            max_steps: 1,
            ..SearchConfig::default()
        };
        let result = lps_decode(&image(), "Describe.", &config, &set, None).unwrap();
        let step = &result.steps[0];
        // Two empties dropped, one exact duplicate removed.
        assert_eq!(step.candidates.len(), 2);
        assert_eq!(step.candidates[0].text.text, "A dog runs.");
        assert_eq!(step.candidates[1].text.text, "A cat sleeps.");
    }

    #[test]
    fn all_empty_batch_exhausts_the_provider() {
        let generator = MockGenerator::scripted(vec![vec!["", "  "]]);
        let set = providers(generator, MockScorer::with_default(0.0));
        let result =
            lps_decode(&image(), "Describe.", &SearchConfig::default(), &set, None).unwrap();
        assert!(result.steps.is_empty());
        assert_eq!(result.final_text, "");
        assert_eq!(result.terminated_by, Termination::ProviderExhausted);
    }

    #[test]
    fn duplicate_only_batches_still_record_one_candidate() {
        let generator =
            MockGenerator::scripted(vec![vec!["Same text.", "Same text.", "Same text."]]);
        let set = providers(generator, MockScorer::with_default(0.0));
        let config = SearchConfig {
            max_steps: 1,
            ..SearchConfig::default()
        };
        // "Same text." has no vocabulary overlap guard issue: "same" and
        // "text" are out of vocabulary, so the embedding is zero and cosine
        // fails; expect a scoring error rather than silence.
        let err = lps_decode(&image(), "Describe.", &config, &set, None).unwrap_err();
        assert!(matches!(
            err,
            SearchError::Scoring {
                step: 1,
                candidate: 0,
                source: ScoreError::Reward(RewardError::ZeroNormVector),
            }
        ));
    }

    #[test]
    fn provider_errors_carry_step_context() {
        struct FailingGenerator;
        impl crate::providers::CandidateGenerator for FailingGenerator {
            fn generate_candidates(
                &self,
                request: &GenerationRequest,
            ) -> Result<Vec<String>, ProviderError> {
                if request.user_prompt == LOCAL_PERCEPTION_PROMPT {
                    return Ok(vec![PRIOR_TEXT.to_string()]);
                }
                Err(ProviderError::Timeout {
                    request_id: "req-1".into(),
                    attempts: 3,
                })
            }
            fn model_id(&self) -> &str {
                "failing"
            }
        }
        let set = ProviderSet {
            generator: Arc::new(FailingGenerator),
            embedder: Arc::new(BagOfWordsEmbedder::new(VOCAB)),
            scorer: Arc::new(MockScorer::with_default(0.0)),
        };
        let err =
            lps_decode(&image(), "Describe.", &SearchConfig::default(), &set, None).unwrap_err();
        match err {
            SearchError::Generation { step, source } => {
                assert_eq!(step, 1);
                assert!(source.to_string().contains("req-1"));
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn score_candidate_matches_expected_values() {
        let set = providers(MockGenerator::empty(), MockScorer::with_default(0.5));
        let prior = acquire_prior(
            &image(),
            set.generator.as_ref(),
            set.embedder.as_ref(),
            None,
        )
        .unwrap();
        let weights = Weights::default();

        let grounded = StepText {
            text: "A dog stands on grass.".into(),
            terminal: false,
        };
        let b = score_candidate(&grounded, &prior, &image(), &weights, &set).unwrap();
        assert!(close(b.r_lps, prior_cosine(4.0, 5.0)));
        assert_eq!(b.r_clip, 0.5);

        // Identical text scores cosine 1 against the prior.
        let same = StepText {
            text: PRIOR_TEXT.into(),
            terminal: true,
        };
        let b = score_candidate(&same, &prior, &image(), &weights, &set).unwrap();
        assert_eq!(b.r_lps, 1.0);

        // Alpha zero leaves only the image-text term.
        let alpha_zero = Weights {
            alpha: 0.0,
            beta: 1.0,
        };
        let b = score_candidate(&grounded, &prior, &image(), &alpha_zero, &set).unwrap();
        assert_eq!(b.combined, 0.5);

        // Empty candidates sink to the floor sentinel.
        let empty = StepText {
            text: "".into(),
            terminal: true,
        };
        let b = score_candidate(&empty, &prior, &image(), &weights, &set).unwrap();
        assert_eq!(b.r_lps, -1.0);
        assert_eq!(b.r_clip, -1.0);
        assert_eq!(b.combined, f64::NEG_INFINITY);
    }

    #[test]
    fn score_with_prefix_scores_the_joined_text() {
        // Candidate repeats prior words already in the prefix; scoring the
        // join changes the cosine, which is observable in the breakdown.
        let generator = MockGenerator::scripted(vec![
            vec!["A dog stands on grass."],
            vec!["The grass is green."],
        ]);
        let set = providers(generator, MockScorer::with_default(0.0));
        let config = SearchConfig {
            score_with_prefix: true,
            max_steps: 2,
            ..SearchConfig::default()
        };
        let result = lps_decode(&image(), "Describe.", &config, &set, None).unwrap();
        let step2 = &result.steps[1];
        // Joined text: "A dog stands on grass. The grass is green." with
        // tokens a,dog,stands,on,grass(x2),the,is,green: dot = 1+1+1+2 = 5,
        // squared mass = 1+1+1+1+4+1+1+1 = 11.
        assert!(close(
            step2.candidates[0].reward.r_lps,
            prior_cosine(5.0, 11.0)
        ));
    }

    #[test]
    fn config_validation_rejects_nonsense() {
        let bad_k = SearchConfig {
            k: 0,
            ..SearchConfig::default()
        };
        assert!(bad_k.validate().is_err());
        let bad_delim = SearchConfig {
            delimiter: String::new(),
            ..SearchConfig::default()
        };
        assert!(bad_delim.validate().is_err());
        let bad_gamma = SearchConfig {
            gamma: 0.0,
            ..SearchConfig::default()
        };
        assert!(bad_gamma.validate().is_err());
        let bad_weights = SearchConfig {
            weights: Weights {
                alpha: 0.0,
                beta: 0.0,
            },
            ..SearchConfig::default()
        };
        assert!(bad_weights.validate().is_err());
    }

    #[test]
    fn decode_is_deterministic_end_to_end() {
        let make_set = || {
            providers(
                MockGenerator::scripted(vec![
                    vec!["A dog stands on grass.", "A cat sleeps."],
                    vec!["The grass is green.", "The sky is blue."],
                ]),
                MockScorer::with_default(0.4),
            )
        };
        let a = lps_decode(
            &image(),
            "Describe.",
            &SearchConfig::default(),
            &make_set(),
            None,
        )
        .unwrap();
        let b = lps_decode(
            &image(),
            "Describe.",
            &SearchConfig::default(),
            &make_set(),
            None,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn result_round_trips_through_json() {
        let generator = MockGenerator::scripted(vec![vec!["A dog runs.", "A cat sleeps."]]);
        let set = providers(generator, MockScorer::with_default(0.25));
        let config = SearchConfig {
            max_steps: 1,
            ..SearchConfig::default()
        };
        let result = lps_decode(&image(), "Describe.", &config, &set, None).unwrap();
        let json = serde_json::to_string(&result).unwrap();
        let back: DecodeResult = serde_json::from_str(&json).unwrap();
        assert_eq!(back, result);
    }

    proptest! {
        /// Whatever the generator scripts, the recorded trace obeys the
        /// structural contract: within budget, within k, no empty
        /// candidates, winner is the tie-broken argmax, and the final text
        /// is the join of winners.
        #[test]
        fn decode_trace_invariants_hold(
            batches in proptest::collection::vec(
                proptest::collection::vec(
                    (proptest::collection::vec(prop::sample::select(&VOCAB[..]), 1..5), proptest::bool::ANY),
                    1..5,
                ),
                1..4,
            ),
            default_score in -1.0..1.0f64,
            k in 1usize..5,
        ) {
            let steps: Vec<Vec<String>> = batches
                .iter()
                .map(|batch| {
                    batch
                        .iter()
                        .map(|(words, terminal)| {
                            let sentence = words.join(" ");
                            if *terminal { sentence } else { format!("{sentence}.") }
                        })
                        .collect()
                })
                .collect();
            let generator = MockGenerator::scripted(steps);
            let set = providers(generator, MockScorer::with_default(default_score));
            let config = SearchConfig { k, max_steps: 5, ..SearchConfig::default() };
            let result = lps_decode(&image(), "Describe.", &config, &set, None).unwrap();

            prop_assert!(result.steps.len() <= config.max_steps);
            let mut winners = Vec::new();
            for (i, step) in result.steps.iter().enumerate() {
                prop_assert_eq!(step.step_index, i + 1);
                prop_assert!(!step.candidates.is_empty());
                prop_assert!(step.candidates.len() <= k);
                prop_assert!(step.selected < step.candidates.len());
                let best = step.candidates[step.selected].reward.combined;
                for (j, cand) in step.candidates.iter().enumerate() {
                    prop_assert!(!cand.text.is_empty());
                    prop_assert!(cand.reward.combined <= best);
                    if j < step.selected {
                        prop_assert!(cand.reward.combined < best);
                    }
                }
                winners.push(step.selected_candidate().text.clone());
            }
            prop_assert_eq!(join_steps(&winners), result.final_text);
        }
    }
}
