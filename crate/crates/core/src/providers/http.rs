//! HTTP backends speaking the OpenAI-compatible wire shapes.
//!
//! Three endpoints, one per provider trait:
//!
//! - `POST {base}/chat/completions` for candidate generation,
//! - `POST {base}/embeddings` for text embeddings,
//! - `POST {base}/score` for image-text alignment.
//!
//! Requests retry on timeouts, transport faults, and retryable statuses
//! (429 and 5xx) with exponential backoff; a definitive rejection (other
//! 4xx) fails immediately. Every logical call carries one request id across
//! all of its attempts so failures can be matched to server logs.

use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};
use uuid::Uuid;

use super::{
    CandidateGenerator, GenerationRequest, ImageRef, ImageTextScorer, ProviderDescriptor,
    ProviderError, RequestLimiter, TextEmbedder,
};
use crate::Embedding;

/// Environment variable consulted for the bearer token when the descriptor
/// does not name its own.
pub const API_KEY_ENV: &str = "LPS_API_KEY";
/// Environment variable that overrides every descriptor's request timeout.
pub const TIMEOUT_ENV: &str = "LPS_TIMEOUT_SECS";

const DEFAULT_BACKOFF_BASE: Duration = Duration::from_millis(200);
const BACKOFF_CAP: Duration = Duration::from_secs(5);

/// Shared request machinery for the three HTTP providers.
struct HttpTransport {
    client: reqwest::blocking::Client,
    base_url: String,
    model_id: String,
    api_key: Option<String>,
    max_retries: u32,
    limiter: Arc<RequestLimiter>,
    backoff_base: Duration,
}

impl HttpTransport {
    fn new(
        descriptor: &ProviderDescriptor,
        limiter: Arc<RequestLimiter>,
    ) -> Result<Self, ProviderError> {
        descriptor.validate()?;
        if descriptor.is_mock() {
            return Err(ProviderError::InvalidConfig {
                detail: "mock endpoint passed to the HTTP backend".into(),
            });
        }
        let timeout_secs = std::env::var(TIMEOUT_ENV)
            .ok()
            .and_then(|v| v.parse::<u64>().ok())
            .filter(|&v| v > 0)
            .unwrap_or(descriptor.timeout_secs);
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(timeout_secs))
            .build()
            .map_err(|e| ProviderError::InvalidConfig {
                detail: format!("http client construction failed: {e}"),
            })?;
        let api_key = descriptor
            .auth_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .or_else(|| std::env::var(API_KEY_ENV).ok())
            .filter(|k| !k.is_empty());
        Ok(Self {
            client,
            base_url: descriptor.endpoint.trim_end_matches('/').to_string(),
            model_id: descriptor.model_id.clone(),
            api_key,
            max_retries: descriptor.max_retries,
            limiter,
            backoff_base: DEFAULT_BACKOFF_BASE,
        })
    }

    /// POSTs `body` to `{base}/{path}`, retrying per policy. Returns the
    /// request id alongside the parsed JSON so callers can attribute parse
    /// failures to the same id.
    fn post_json(&self, path: &str, body: &Value) -> Result<(String, Value), ProviderError> {
        let request_id = Uuid::new_v4().to_string();
        let url = format!("{}/{}", self.base_url, path);
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            let _slot = self.limiter.acquire();
            let mut req = self
                .client
                .post(&url)
                .header("x-request-id", &request_id)
                .json(body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let outcome = req.send();
            drop(_slot);

            let retriable = match outcome {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return match resp.json::<Value>() {
                            Ok(value) => Ok((request_id, value)),
                            Err(e) => Err(ProviderError::MalformedResponse {
                                request_id,
                                detail: format!("response body is not JSON: {e}"),
                            }),
                        };
                    }
                    let message = resp.text().unwrap_or_default();
                    let rejected = ProviderError::Rejected {
                        request_id: request_id.clone(),
                        status: status.as_u16(),
                        message: truncate_message(&message),
                    };
                    if !retryable_status(status.as_u16()) {
                        return Err(rejected);
                    }
                    rejected
                }
                Err(e) if e.is_timeout() => ProviderError::Timeout {
                    request_id: request_id.clone(),
                    attempts: attempt,
                },
                Err(e) => ProviderError::Transport {
                    request_id: request_id.clone(),
                    attempts: attempt,
                    detail: e.to_string(),
                },
            };

            if attempt > self.max_retries {
                return Err(retriable);
            }
            std::thread::sleep(backoff_delay(self.backoff_base, attempt));
        }
    }
}

/// 429 and server-side errors are worth retrying; other client errors are
/// definitive.
fn retryable_status(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

/// Exponential backoff: base * 2^(attempt-1), capped.
fn backoff_delay(base: Duration, attempt: u32) -> Duration {
    let factor = 1u32 << (attempt - 1).min(8);
    (base * factor).min(BACKOFF_CAP)
}

fn truncate_message(message: &str) -> String {
    const LIMIT: usize = 300;
    if message.len() <= LIMIT {
        message.to_string()
    } else {
        let cut = message
            .char_indices()
            .take_while(|(i, _)| *i < LIMIT)
            .last()
            .map(|(i, c)| i + c.len_utf8())
            .unwrap_or(0);
        format!("{}...", &message[..cut])
    }
}

/// Candidate generation over `POST {base}/chat/completions`.
///
/// The decode prefix travels as a trailing assistant message, which
/// OpenAI-compatible servers treat as a continuation seed (assistant
/// prefill). Servers strip matched stop sequences from returned content, so
/// when a choice stopped on the requested stop string the delimiter is
/// re-appended locally; a choice that stopped on end-of-sequence is left
/// untouched and will read as terminal downstream.
pub struct HttpGenerator {
    transport: HttpTransport,
}

impl HttpGenerator {
    pub fn new(descriptor: &ProviderDescriptor) -> Result<Self, ProviderError> {
        Self::with_limiter(descriptor, Arc::new(RequestLimiter::default()))
    }

    pub fn with_limiter(
        descriptor: &ProviderDescriptor,
        limiter: Arc<RequestLimiter>,
    ) -> Result<Self, ProviderError> {
        Ok(Self {
            transport: HttpTransport::new(descriptor, limiter)?,
        })
    }

    /// Shrinks the retry backoff; meant for tests against local servers.
    pub fn backoff_base(mut self, base: Duration) -> Self {
        self.transport.backoff_base = base;
        self
    }
}

fn generation_body(model: &str, request: &GenerationRequest) -> Result<Value, ProviderError> {
    request.sampling.validate()?;
    if request.k == 0 {
        return Err(ProviderError::InvalidConfig {
            detail: "candidate count k must be at least 1".into(),
        });
    }
    let mut messages = Vec::new();
    if !request.system_prompt.is_empty() {
        messages.push(json!({"role": "system", "content": request.system_prompt}));
    }
    messages.push(json!({
        "role": "user",
        "content": [
            {"type": "image_url", "image_url": {"url": request.image.as_transport_url()?}},
            {"type": "text", "text": request.user_prompt},
        ],
    }));
    if !request.prefix.is_empty() {
        messages.push(json!({"role": "assistant", "content": request.prefix}));
    }
    let mut body = json!({
        "model": model,
        "messages": messages,
        "n": request.k,
        "temperature": request.sampling.temperature,
        "top_p": request.sampling.top_p,
        "max_tokens": request.sampling.max_new_units,
    });
    if let Some(seed) = request.sampling.seed {
        body["seed"] = json!(seed);
    }
    if let Some(stop) = &request.stop {
        body["stop"] = json!([stop]);
    }
    Ok(body)
}

fn parse_generation_response(
    request_id: &str,
    value: &Value,
    stop: Option<&str>,
) -> Result<Vec<String>, ProviderError> {
    let malformed = |detail: String| ProviderError::MalformedResponse {
        request_id: request_id.to_string(),
        detail,
    };
    let choices = value
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed("missing \"choices\" array".into()))?;
    let mut candidates = Vec::with_capacity(choices.len());
    for (i, choice) in choices.iter().enumerate() {
        let content = choice
            .pointer("/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| malformed(format!("choice {i} has no message content")))?;
        let mut text = content.to_string();
        if let Some(stop_seq) = stop {
            let finish = choice.get("finish_reason").and_then(Value::as_str);
            // vLLM-style servers report the matched stop string in
            // "stop_reason" (null when generation hit end-of-sequence).
            let eos = choice.get("stop_reason").is_some_and(Value::is_null);
            let needs_delimiter =
                finish == Some("stop") && !eos && !text.trim_end().ends_with(stop_seq);
            if needs_delimiter && !text.trim().is_empty() {
                text.push_str(stop_seq);
            }
        }
        candidates.push(text);
    }
    Ok(candidates)
}

impl CandidateGenerator for HttpGenerator {
    fn generate_candidates(
        &self,
        request: &GenerationRequest,
    ) -> Result<Vec<String>, ProviderError> {
        let body = generation_body(&self.transport.model_id, request)?;
        let (request_id, value) = self.transport.post_json("chat/completions", &body)?;
        let mut candidates =
            parse_generation_response(&request_id, &value, request.stop.as_deref())?;
        candidates.truncate(request.k);
        Ok(candidates)
    }

    fn model_id(&self) -> &str {
        &self.transport.model_id
    }
}

/// Text embeddings over `POST {base}/embeddings`.
pub struct HttpEmbedder {
    transport: HttpTransport,
}

impl HttpEmbedder {
    pub fn new(descriptor: &ProviderDescriptor) -> Result<Self, ProviderError> {
        Self::with_limiter(descriptor, Arc::new(RequestLimiter::default()))
    }

    pub fn with_limiter(
        descriptor: &ProviderDescriptor,
        limiter: Arc<RequestLimiter>,
    ) -> Result<Self, ProviderError> {
        Ok(Self {
            transport: HttpTransport::new(descriptor, limiter)?,
        })
    }

    pub fn backoff_base(mut self, base: Duration) -> Self {
        self.transport.backoff_base = base;
        self
    }
}

fn parse_embedding_response(request_id: &str, value: &Value) -> Result<Embedding, ProviderError> {
    let malformed = |detail: String| ProviderError::MalformedResponse {
        request_id: request_id.to_string(),
        detail,
    };
    let raw = value
        .pointer("/data/0/embedding")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed("missing \"data[0].embedding\" array".into()))?;
    let mut values = Vec::with_capacity(raw.len());
    for (i, v) in raw.iter().enumerate() {
        values.push(
            v.as_f64()
                .ok_or_else(|| malformed(format!("embedding value {i} is not a number")))?,
        );
    }
    Embedding::new(values).map_err(|e| malformed(format!("invalid embedding: {e}")))
}

impl TextEmbedder for HttpEmbedder {
    fn embed_text(&self, text: &str) -> Result<Embedding, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::EmptyText);
        }
        let body = json!({"model": self.transport.model_id, "input": text});
        let (request_id, value) = self.transport.post_json("embeddings", &body)?;
        parse_embedding_response(&request_id, &value)
    }

    fn model_id(&self) -> &str {
        &self.transport.model_id
    }
}

/// Image-text alignment over `POST {base}/score`.
///
/// The response must carry a raw similarity in [-1, 1] (a small epsilon of
/// float drift is clamped); logit-scaled scores are rejected as malformed so
/// misconfigured scorers fail loudly instead of skewing rewards.
pub struct HttpScorer {
    transport: HttpTransport,
}

impl HttpScorer {
    pub fn new(descriptor: &ProviderDescriptor) -> Result<Self, ProviderError> {
        Self::with_limiter(descriptor, Arc::new(RequestLimiter::default()))
    }

    pub fn with_limiter(
        descriptor: &ProviderDescriptor,
        limiter: Arc<RequestLimiter>,
    ) -> Result<Self, ProviderError> {
        Ok(Self {
            transport: HttpTransport::new(descriptor, limiter)?,
        })
    }

    pub fn backoff_base(mut self, base: Duration) -> Self {
        self.transport.backoff_base = base;
        self
    }
}

fn parse_score_response(request_id: &str, value: &Value) -> Result<f64, ProviderError> {
    const DRIFT: f64 = 1e-6;
    let malformed = |detail: String| ProviderError::MalformedResponse {
        request_id: request_id.to_string(),
        detail,
    };
    let score = value
        .get("score")
        .and_then(Value::as_f64)
        .ok_or_else(|| malformed("missing numeric \"score\" field".into()))?;
    if !score.is_finite() || !(-1.0 - DRIFT..=1.0 + DRIFT).contains(&score) {
        return Err(malformed(format!(
            "score {score} is outside [-1, 1]; expected a raw similarity, not a logit"
        )));
    }
    Ok(score.clamp(-1.0, 1.0))
}

impl ImageTextScorer for HttpScorer {
    fn score_image_text(&self, image: &ImageRef, text: &str) -> Result<f64, ProviderError> {
        let body = json!({
            "model": self.transport.model_id,
            "image": image.as_transport_url()?,
            "text": text,
        });
        let (request_id, value) = self.transport.post_json("score", &body)?;
        parse_score_response(&request_id, &value)
    }

    fn model_id(&self) -> &str {
        &self.transport.model_id
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::SamplingParams;

    fn request(k: usize, prefix: &str, stop: Option<&str>) -> GenerationRequest {
        GenerationRequest {
            image: ImageRef::from_bytes(vec![1, 2, 3], "image/png").unwrap(),
            system_prompt: String::new(),
            user_prompt: "Describe this image.".into(),
            prefix: prefix.into(),
            k,
            sampling: SamplingParams::default(),
            stop: stop.map(String::from),
        }
    }

    #[test]
    fn retryable_statuses() {
        assert!(retryable_status(429));
        assert!(retryable_status(500));
        assert!(retryable_status(503));
        assert!(!retryable_status(400));
        assert!(!retryable_status(401));
        assert!(!retryable_status(404));
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let base = Duration::from_millis(200);
        assert_eq!(backoff_delay(base, 1), Duration::from_millis(200));
        assert_eq!(backoff_delay(base, 2), Duration::from_millis(400));
        assert_eq!(backoff_delay(base, 3), Duration::from_millis(800));
        assert_eq!(backoff_delay(base, 20), Duration::from_secs(5));
    }

    #[test]
    fn generation_body_includes_prefix_as_assistant_prefill() {
        let body = generation_body("m1", &request(4, "A dog runs.", Some("."))).unwrap();
        let messages = body["messages"].as_array().unwrap();
        assert_eq!(messages.len(), 2);
        assert_eq!(messages[1]["role"], "assistant");
        assert_eq!(messages[1]["content"], "A dog runs.");
        assert_eq!(body["n"], 4);
        assert_eq!(body["stop"][0], ".");
    }

    #[test]
    fn generation_body_omits_empty_prefix_and_system() {
        let body = generation_body("m1", &request(2, "", None)).unwrap();
        let messages = body["messages"].as_array().unwrap();
        assert_eq!(messages.len(), 1);
        assert_eq!(messages[0]["role"], "user");
        assert!(body.get("stop").is_none());
    }

    #[test]
    fn generation_body_rejects_zero_k() {
        assert!(generation_body("m1", &request(0, "", None)).is_err());
    }

    #[test]
    fn stripped_stop_sequence_is_restored() {
        let value = serde_json::json!({
            "choices": [
                {"message": {"content": "A cat sits"}, "finish_reason": "stop"},
                {"message": {"content": "A dog runs."}, "finish_reason": "stop"},
                {"message": {"content": "and then some"}, "finish_reason": "length"},
            ]
        });
        let got = parse_generation_response("r", &value, Some(".")).unwrap();
        assert_eq!(got, vec!["A cat sits.", "A dog runs.", "and then some"]);
    }

    #[test]
    fn explicit_eos_marker_suppresses_delimiter_restoration() {
        let value = serde_json::json!({
            "choices": [
                {"message": {"content": "and that is all"}, "finish_reason": "stop", "stop_reason": null},
                {"message": {"content": "A bird flies"}, "finish_reason": "stop", "stop_reason": "."},
            ]
        });
        let got = parse_generation_response("r", &value, Some(".")).unwrap();
        assert_eq!(got, vec!["and that is all", "A bird flies."]);
    }

    #[test]
    fn missing_choices_is_malformed() {
        let err = parse_generation_response("r", &serde_json::json!({}), None).unwrap_err();
        assert!(matches!(err, ProviderError::MalformedResponse { .. }));
    }

    #[test]
    fn embedding_response_parses_and_validates() {
        let ok = serde_json::json!({"data": [{"embedding": [0.1, -0.2, 0.3]}]});
        let emb = parse_embedding_response("r", &ok).unwrap();
        assert_eq!(emb.values(), &[0.1, -0.2, 0.3]);

        let empty = serde_json::json!({"data": [{"embedding": []}]});
        assert!(parse_embedding_response("r", &empty).is_err());
        let missing = serde_json::json!({"data": []});
        assert!(parse_embedding_response("r", &missing).is_err());
    }

    #[test]
    fn score_response_enforces_unit_range() {
        let ok = serde_json::json!({"score": 0.37});
        assert_eq!(parse_score_response("r", &ok).unwrap(), 0.37);
        let drift = serde_json::json!({"score": 1.0000001});
        assert_eq!(parse_score_response("r", &drift).unwrap(), 1.0);
        let logit = serde_json::json!({"score": 27.4});
        assert!(parse_score_response("r", &logit).is_err());
        let missing = serde_json::json!({"value": 0.5});
        assert!(parse_score_response("r", &missing).is_err());
    }

    #[test]
    fn long_error_bodies_are_truncated() {
        let long = "x".repeat(1000);
        assert!(truncate_message(&long).len() < 320);
        assert_eq!(truncate_message("short"), "short");
    }
}
