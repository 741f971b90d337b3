//! Deterministic in-process providers.
//!
//! Two families live here. The scripted mocks ([`MockGenerator`],
//! [`BagOfWordsEmbedder`], [`MockScorer`]) are exact fixtures for tests:
//! every response is spelled out or hand-computable. The built-in demo set
//! ([`builtin_mock_set`]) backs `endpoint = "mock"` in job configs so the
//! whole pipeline runs offline; its outputs are pure functions of the image
//! bytes and request, so reruns produce byte-identical traces.

use std::collections::HashMap;

use super::{
    CandidateGenerator, GenerationRequest, ImageRef, ImageTextScorer, ProviderError, ProviderSet,
    TextEmbedder,
};
use crate::segment::{split_steps, tokenize};
use crate::Embedding;

/// What a scripted generator returns once its step script runs out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AfterScript {
    /// No more candidates: the search observes exhaustion.
    #[default]
    Empty,
    /// Keep replaying the last scripted step.
    RepeatLast,
    /// Wrap around to the first step.
    Cycle,
}

/// Generator that replays a fixed script.
///
/// Candidate batches are keyed by how many completed steps the request
/// prefix contains, so the script lines up with decode steps regardless of
/// exact prefix text. Exact prompt matches (used for the perception prior,
/// which asks a fixed question with an empty prefix) take priority over the
/// step script.
pub struct MockGenerator {
    steps: Vec<Vec<String>>,
    prompt_responses: HashMap<String, String>,
    after: AfterScript,
    delimiter: String,
    model_id: String,
}

impl MockGenerator {
    /// Generator with no step script; useful when only exact prompt
    /// responses matter (prior fixtures).
    pub fn empty() -> Self {
        Self::scripted(Vec::<Vec<String>>::new())
    }

    pub fn scripted<S: Into<String>>(steps: Vec<Vec<S>>) -> Self {
        Self {
            steps: steps
                .into_iter()
                .map(|batch| batch.into_iter().map(Into::into).collect())
                .collect(),
            prompt_responses: HashMap::new(),
            after: AfterScript::default(),
            delimiter: ".".into(),
            model_id: "mock-generator".into(),
        }
    }

    /// Canned single response for an exact user prompt.
    pub fn respond_to(mut self, prompt: impl Into<String>, response: impl Into<String>) -> Self {
        self.prompt_responses.insert(prompt.into(), response.into());
        self
    }

    pub fn after_script(mut self, after: AfterScript) -> Self {
        self.after = after;
        self
    }

    /// Delimiter used to count completed steps in the prefix. Must match the
    /// search configuration the mock is used with.
    pub fn delimiter(mut self, delimiter: impl Into<String>) -> Self {
        self.delimiter = delimiter.into();
        self
    }
}

impl CandidateGenerator for MockGenerator {
    fn generate_candidates(
        &self,
        request: &GenerationRequest,
    ) -> Result<Vec<String>, ProviderError> {
        if let Some(response) = self.prompt_responses.get(&request.user_prompt) {
            return Ok(vec![response.clone()]);
        }
        let step = split_steps(&request.prefix, &self.delimiter).len();
        let batch = match self.steps.get(step) {
            Some(batch) => batch.clone(),
            None => match self.after {
                AfterScript::Empty => Vec::new(),
                AfterScript::RepeatLast => self.steps.last().cloned().unwrap_or_default(),
                AfterScript::Cycle if self.steps.is_empty() => Vec::new(),
                AfterScript::Cycle => self.steps[step % self.steps.len()].clone(),
            },
        };
        Ok(batch.into_iter().take(request.k).collect())
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }
}

/// Embedder with hand-checkable output: dimension `i` counts occurrences of
/// vocabulary word `i` in the tokenized text.
///
/// Texts sharing no vocabulary words embed to the zero vector, which cosine
/// similarity rejects; fixtures should draw every sentence from the
/// vocabulary.
pub struct BagOfWordsEmbedder {
    vocab: Vec<String>,
    model_id: String,
}

impl BagOfWordsEmbedder {
    pub fn new<S: AsRef<str>>(vocab: impl IntoIterator<Item = S>) -> Self {
        Self {
            vocab: vocab
                .into_iter()
                .map(|w| w.as_ref().to_lowercase())
                .collect(),
            model_id: "mock-bag-of-words".into(),
        }
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }
}

impl TextEmbedder for BagOfWordsEmbedder {
    fn embed_text(&self, text: &str) -> Result<Embedding, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::EmptyText);
        }
        let tokens = tokenize(text);
        let values = self
            .vocab
            .iter()
            .map(|word| tokens.iter().filter(|t| *t == word).count() as f64)
            .collect();
        Embedding::new(values).map_err(|e| ProviderError::InvalidConfig {
            detail: format!("bag-of-words vocabulary unusable: {e}"),
        })
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }
}

/// Scorer backed by lookup tables: exact (image, text) pairs first, then
/// text-only entries, then a default.
pub struct MockScorer {
    by_pair: HashMap<(String, String), f64>,
    by_text: HashMap<String, f64>,
    default: f64,
    model_id: String,
}

impl MockScorer {
    pub fn with_default(default: f64) -> Self {
        assert!((-1.0..=1.0).contains(&default), "score outside [-1, 1]");
        Self {
            by_pair: HashMap::new(),
            by_text: HashMap::new(),
            default,
            model_id: "mock-scorer".into(),
        }
    }

    pub fn pair(mut self, image: &ImageRef, text: impl Into<String>, score: f64) -> Self {
        assert!((-1.0..=1.0).contains(&score), "score outside [-1, 1]");
        let identity = image.identity().expect("mock image must be readable");
        self.by_pair.insert((identity, text.into()), score);
        self
    }

    pub fn text(mut self, text: impl Into<String>, score: f64) -> Self {
        assert!((-1.0..=1.0).contains(&score), "score outside [-1, 1]");
        self.by_text.insert(text.into(), score);
        self
    }
}

impl ImageTextScorer for MockScorer {
    fn score_image_text(&self, image: &ImageRef, text: &str) -> Result<f64, ProviderError> {
        let identity = image.identity()?;
        if let Some(&s) = self.by_pair.get(&(identity, text.to_string())) {
            return Ok(s);
        }
        if let Some(&s) = self.by_text.get(text) {
            return Ok(s);
        }
        Ok(self.default)
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }
}

// ---------------------------------------------------------------------------
// Built-in demo providers for `endpoint = "mock"`.
// ---------------------------------------------------------------------------

const DEMO_OBJECTS: [&str; 8] = [
    "dog", "cat", "bench", "car", "tree", "bird", "bicycle", "person",
];
const DEMO_PLACES: [&str; 4] = ["path", "field", "wall", "gate"];
const DEMO_FILLERS: [&str; 22] = [
    "a", "an", "the", "is", "are", "visible", "near", "top", "bottom", "left", "right", "yes",
    "no", "scene", "image", "nothing", "else", "stands", "out", "shows", "and", "quiet",
];

/// Sentences the demo generator emits per decode before going terminal.
const DEMO_SENTENCE_STEPS: usize = 3;

/// FNV-1a over the given parts with a separator fold between them. Stable
/// across platforms and releases, unlike the std hasher.
fn demo_hash(parts: &[&str]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for part in parts {
        for byte in part.as_bytes() {
            h ^= u64::from(*byte);
            h = h.wrapping_mul(PRIME);
        }
        h ^= 0xff;
        h = h.wrapping_mul(PRIME);
    }
    h
}

fn pick<'a>(pool: &'a [&'a str], hash: u64) -> &'a str {
    pool[(hash % pool.len() as u64) as usize]
}

/// Offline stand-in for a captioning model. Output depends only on the image
/// bytes, the prompt, and the prefix, so runs are reproducible end to end.
pub struct BuiltinMockGenerator {
    delimiter: String,
}

impl BuiltinMockGenerator {
    pub fn new(delimiter: impl Into<String>) -> Self {
        Self {
            delimiter: delimiter.into(),
        }
    }
}

impl CandidateGenerator for BuiltinMockGenerator {
    fn generate_candidates(
        &self,
        request: &GenerationRequest,
    ) -> Result<Vec<String>, ProviderError> {
        let identity = request.image.identity()?;
        if request.user_prompt == crate::prior::LOCAL_PERCEPTION_PROMPT {
            let h = demo_hash(&[&identity, "prior"]);
            let inventory = format!(
                "Top: a {}. Bottom: a {}. Left: a {}. Right: a {}.",
                pick(&DEMO_OBJECTS, h),
                pick(&DEMO_OBJECTS, h >> 8),
                pick(&DEMO_OBJECTS, h >> 16),
                pick(&DEMO_OBJECTS, h >> 24),
            );
            return Ok(vec![inventory]);
        }
        if request.user_prompt.trim_end().ends_with('?') {
            // A direct answer is a complete utterance: no delimiter, so the
            // step reads as terminal and the decode stops after it.
            let h = demo_hash(&[&identity, &request.user_prompt]);
            let answer = if h.is_multiple_of(2) { "Yes" } else { "No" };
            return Ok(vec![answer.to_string()]);
        }
        let step = split_steps(&request.prefix, &self.delimiter).len();
        if step >= DEMO_SENTENCE_STEPS {
            // No trailing delimiter: reads as a terminal step.
            return Ok(vec!["and the scene is quiet".to_string()]);
        }
        let step_label = step.to_string();
        let candidates = (0..request.k)
            .map(|i| {
                let i_label = i.to_string();
                let h = demo_hash(&[&identity, &step_label, &i_label]);
                format!(
                    "A {} is visible near the {}.",
                    pick(&DEMO_OBJECTS, h),
                    pick(&DEMO_PLACES, h >> 16),
                )
            })
            .collect();
        Ok(candidates)
    }

    fn model_id(&self) -> &str {
        "builtin-mock-generator"
    }
}

/// Offline image-text scorer: a stable hash of (image identity, text) mapped
/// into [-1, 1].
pub struct BuiltinMockScorer;

impl ImageTextScorer for BuiltinMockScorer {
    fn score_image_text(&self, image: &ImageRef, text: &str) -> Result<f64, ProviderError> {
        let identity = image.identity()?;
        let h = demo_hash(&[&identity, text]);
        Ok(((h % 2001) as f64 - 1000.0) / 1000.0)
    }

    fn model_id(&self) -> &str {
        "builtin-mock-scorer"
    }
}

/// The word list the demo embedder counts; covers every word the demo
/// generator can emit so no demo sentence embeds to the zero vector.
pub fn builtin_vocab() -> Vec<&'static str> {
    DEMO_OBJECTS
        .iter()
        .chain(DEMO_PLACES.iter())
        .chain(DEMO_FILLERS.iter())
        .copied()
        .collect()
}

/// Complete offline provider set for `endpoint = "mock"`.
pub fn builtin_mock_set(delimiter: &str) -> ProviderSet {
    ProviderSet {
        generator: std::sync::Arc::new(BuiltinMockGenerator::new(delimiter)),
        embedder: std::sync::Arc::new(BagOfWordsEmbedder::new(builtin_vocab())),
        scorer: std::sync::Arc::new(BuiltinMockScorer),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::SamplingParams;

    fn request(prompt: &str, prefix: &str, k: usize) -> GenerationRequest {
        GenerationRequest {
            image: ImageRef::from_bytes(vec![42], "image/png").unwrap(),
            system_prompt: String::new(),
            user_prompt: prompt.into(),
            prefix: prefix.into(),
            k,
            sampling: SamplingParams::default(),
            stop: Some(".".into()),
        }
    }

    #[test]
    fn scripted_generator_keys_batches_by_completed_steps() {
        let gen = MockGenerator::scripted(vec![
            vec!["First one.", "First two."],
            vec!["Second one.", "Second two."],
        ]);
        assert_eq!(
            gen.generate_candidates(&request("p", "", 6)).unwrap(),
            vec!["First one.", "First two."]
        );
        assert_eq!(
            gen.generate_candidates(&request("p", "First one.", 6))
                .unwrap(),
            vec!["Second one.", "Second two."]
        );
        assert!(gen
            .generate_candidates(&request("p", "First one. Second two.", 6))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn scripted_generator_truncates_to_k() {
        let gen = MockGenerator::scripted(vec![vec!["a.", "b.", "c."]]);
        assert_eq!(
            gen.generate_candidates(&request("p", "", 2)).unwrap(),
            vec!["a.", "b."]
        );
    }

    #[test]
    fn prompt_response_takes_priority() {
        let gen = MockGenerator::scripted(vec![vec!["step batch."]])
            .respond_to("who is there", "an inventory of objects");
        assert_eq!(
            gen.generate_candidates(&request("who is there", "", 3))
                .unwrap(),
            vec!["an inventory of objects"]
        );
        assert_eq!(
            gen.generate_candidates(&request("other", "", 3)).unwrap(),
            vec!["step batch."]
        );
    }

    #[test]
    fn after_script_policies() {
        let steps = vec![vec!["one."], vec!["two."]];
        let repeat = MockGenerator::scripted(steps.clone()).after_script(AfterScript::RepeatLast);
        assert_eq!(
            repeat
                .generate_candidates(&request("p", "one. two. one.", 4))
                .unwrap(),
            vec!["two."]
        );
        let cycle = MockGenerator::scripted(steps).after_script(AfterScript::Cycle);
        assert_eq!(
            cycle
                .generate_candidates(&request("p", "one. two.", 4))
                .unwrap(),
            vec!["one."]
        );
    }

    #[test]
    fn generator_is_deterministic() {
        let gen = MockGenerator::scripted(vec![vec!["x.", "y."]]);
        let a = gen.generate_candidates(&request("p", "", 6)).unwrap();
        let b = gen.generate_candidates(&request("p", "", 6)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bag_of_words_counts_occurrences() {
        let emb = BagOfWordsEmbedder::new(["dog", "cat", "grass"]);
        let v = emb.embed_text("The dog saw a dog near grass.").unwrap();
        assert_eq!(v.values(), &[2.0, 0.0, 1.0]);
    }

    #[test]
    fn bag_of_words_is_case_and_punctuation_insensitive() {
        let emb = BagOfWordsEmbedder::new(["Dog", "grass"]);
        let a = emb.embed_text("DOG, grass!").unwrap();
        let b = emb.embed_text("dog grass").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bag_of_words_rejects_empty_text() {
        let emb = BagOfWordsEmbedder::new(["dog"]);
        assert!(matches!(
            emb.embed_text("   "),
            Err(ProviderError::EmptyText)
        ));
    }

    #[test]
    fn bag_of_words_out_of_vocab_is_zero_vector() {
        let emb = BagOfWordsEmbedder::new(["dog", "cat"]);
        let v = emb.embed_text("hello world").unwrap();
        assert_eq!(v.values(), &[0.0, 0.0]);
        assert_eq!(v.norm(), 0.0);
    }

    #[test]
    fn scorer_lookup_order_is_pair_then_text_then_default() {
        let img = ImageRef::from_bytes(vec![1], "image/png").unwrap();
        let other = ImageRef::from_bytes(vec![2], "image/png").unwrap();
        let scorer = MockScorer::with_default(0.1)
            .pair(&img, "A cat sleeps.", 0.9)
            .text("A cat sleeps.", 0.5);
        assert_eq!(scorer.score_image_text(&img, "A cat sleeps.").unwrap(), 0.9);
        assert_eq!(
            scorer.score_image_text(&other, "A cat sleeps.").unwrap(),
            0.5
        );
        assert_eq!(scorer.score_image_text(&img, "unknown").unwrap(), 0.1);
    }

    #[test]
    fn builtin_generator_is_pure_and_in_vocab() {
        let gen = BuiltinMockGenerator::new(".");
        let req = request("Describe this image.", "", 4);
        let a = gen.generate_candidates(&req).unwrap();
        let b = gen.generate_candidates(&req).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);

        let vocab: Vec<String> = builtin_vocab().iter().map(|s| s.to_string()).collect();
        for candidate in &a {
            for token in tokenize(candidate) {
                assert!(vocab.contains(&token), "demo token {token:?} not in vocab");
            }
        }
    }

    #[test]
    fn builtin_generator_answers_prior_prompt_with_inventory() {
        let gen = BuiltinMockGenerator::new(".");
        let req = request(crate::prior::LOCAL_PERCEPTION_PROMPT, "", 1);
        let out = gen.generate_candidates(&req).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].starts_with("Top: a "));
    }

    #[test]
    fn builtin_generator_goes_terminal_after_three_sentences() {
        let gen = BuiltinMockGenerator::new(".");
        let prefix = "A dog is visible near the path. A cat is visible near the wall. \
                      A bird is visible near the gate.";
        let out = gen
            .generate_candidates(&request("Describe this image.", prefix, 4))
            .unwrap();
        assert_eq!(out, vec!["and the scene is quiet"]);
    }

    #[test]
    fn builtin_generator_answers_questions_yes_or_no() {
        let gen = BuiltinMockGenerator::new(".");
        let out = gen
            .generate_candidates(&request("Is there a dog in the image?", "", 4))
            .unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0] == "Yes" || out[0] == "No");
    }

    #[test]
    fn builtin_scorer_is_pure_and_bounded() {
        let img = ImageRef::from_bytes(vec![3, 4], "image/png").unwrap();
        let a = BuiltinMockScorer.score_image_text(&img, "A dog.").unwrap();
        let b = BuiltinMockScorer.score_image_text(&img, "A dog.").unwrap();
        assert_eq!(a, b);
        assert!((-1.0..=1.0).contains(&a));
        let c = BuiltinMockScorer.score_image_text(&img, "A cat.").unwrap();
        assert_ne!(a, c);
    }
}
