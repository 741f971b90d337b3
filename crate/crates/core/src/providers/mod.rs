//! Model access behind three narrow traits.
//!
//! The search needs exactly three capabilities: sampling candidate
//! continuations from a multimodal generator, embedding text, and scoring
//! image-text alignment. Each is its own trait so deployments can mix
//! backends freely (one HTTP service for generation, another for embeddings,
//! a deterministic mock for tests). All implementations are `Send + Sync`
//! because the job runner fans decode work out across threads.

pub mod http;
mod limiter;
pub mod mock;

pub use limiter::RequestLimiter;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::Embedding;

/// Failures surfaced by providers. Request-scoped variants carry the request
/// id so a failing call can be matched against server logs.
#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("request {request_id} timed out after {attempts} attempt(s)")]
    Timeout { request_id: String, attempts: u32 },
    #[error("request {request_id} rejected with status {status}: {message}")]
    Rejected {
        request_id: String,
        status: u16,
        message: String,
    },
    #[error("request {request_id} returned a malformed response: {detail}")]
    MalformedResponse { request_id: String, detail: String },
    #[error("request {request_id} failed in transport after {attempts} attempt(s): {detail}")]
    Transport {
        request_id: String,
        attempts: u32,
        detail: String,
    },
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("cannot use image: {detail}")]
    UnusableImage { detail: String },
    #[error("invalid provider configuration: {detail}")]
    InvalidConfig { detail: String },
}

/// Where the image bytes live.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImageSource {
    Path(PathBuf),
    Url(String),
    Inline(Vec<u8>),
}

/// An image handed to providers, together with its media type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRef {
    source: ImageSource,
    media_type: String,
}

impl ImageRef {
    /// References an image file on disk; media type is inferred from the
    /// extension (defaulting to JPEG).
    pub fn from_path(path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        let media_type = match path.extension().and_then(|e| e.to_str()) {
            Some("png") => "image/png",
            Some("gif") => "image/gif",
            Some("webp") => "image/webp",
            Some("bmp") => "image/bmp",
            _ => "image/jpeg",
        };
        Self {
            source: ImageSource::Path(path),
            media_type: media_type.to_string(),
        }
    }

    /// References an image by URL; the bytes stay remote and are fetched by
    /// the provider backend, not by this process.
    pub fn from_url(url: impl Into<String>, media_type: impl Into<String>) -> Self {
        Self {
            source: ImageSource::Url(url.into()),
            media_type: media_type.into(),
        }
    }

    /// Wraps in-memory image bytes.
    pub fn from_bytes(data: Vec<u8>, media_type: impl Into<String>) -> Result<Self, ProviderError> {
        if data.is_empty() {
            return Err(ProviderError::UnusableImage {
                detail: "empty byte buffer".into(),
            });
        }
        Ok(Self {
            source: ImageSource::Inline(data),
            media_type: media_type.into(),
        })
    }

    pub fn source(&self) -> &ImageSource {
        &self.source
    }

    pub fn media_type(&self) -> &str {
        &self.media_type
    }

    /// Stable identity for caching and mock lookup tables: the SHA-256 of
    /// the image content (or of the URL string for remote images), hex
    /// encoded. Two paths to byte-identical files share an identity.
    pub fn identity(&self) -> Result<String, ProviderError> {
        let digest = match &self.source {
            ImageSource::Path(p) => Sha256::digest(read_image_bytes(p)?),
            ImageSource::Inline(b) => Sha256::digest(b),
            ImageSource::Url(u) => Sha256::digest(u.as_bytes()),
        };
        Ok(hex::encode(digest))
    }

    /// The image as a `data:` URI for JSON transport. URL sources are passed
    /// through untouched.
    pub fn as_transport_url(&self) -> Result<String, ProviderError> {
        use base64::Engine as _;
        let bytes = match &self.source {
            ImageSource::Url(u) => return Ok(u.clone()),
            ImageSource::Path(p) => read_image_bytes(p)?,
            ImageSource::Inline(b) => b.clone(),
        };
        let encoded = base64::engine::general_purpose::STANDARD.encode(bytes);
        Ok(format!("data:{};base64,{}", self.media_type, encoded))
    }
}

fn read_image_bytes(path: &Path) -> Result<Vec<u8>, ProviderError> {
    let bytes = std::fs::read(path).map_err(|e| ProviderError::UnusableImage {
        detail: format!("{}: {}", path.display(), e),
    })?;
    if bytes.is_empty() {
        return Err(ProviderError::UnusableImage {
            detail: format!("{}: empty file", path.display()),
        });
    }
    Ok(bytes)
}

/// Sampling controls forwarded to the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_top_p")]
    pub top_p: f64,
    /// Cap on newly generated units (tokens for HTTP backends).
    #[serde(default = "default_max_new_units")]
    pub max_new_units: u32,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_temperature() -> f64 {
    0.7
}
fn default_top_p() -> f64 {
    0.95
}
fn default_max_new_units() -> u32 {
    128
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: default_temperature(),
            top_p: default_top_p(),
            max_new_units: default_max_new_units(),
            seed: None,
        }
    }
}

impl SamplingParams {
    /// Greedy decoding: temperature 0, full nucleus.
    pub fn greedy() -> Self {
        Self {
            temperature: 0.0,
            top_p: 1.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        let ok = self.temperature.is_finite()
            && self.temperature >= 0.0
            && self.top_p.is_finite()
            && self.top_p > 0.0
            && self.top_p <= 1.0
            && self.max_new_units > 0;
        if ok {
            Ok(())
        } else {
            Err(ProviderError::InvalidConfig {
                detail: "sampling parameters out of range".into(),
            })
        }
    }
}

/// One candidate-generation call: continue `prefix` for the given image and
/// prompts, returning up to `k` sampled continuations.
#[derive(Debug, Clone)]
pub struct GenerationRequest {
    pub image: ImageRef,
    pub system_prompt: String,
    pub user_prompt: String,
    /// Text already decoded; continuations must follow it.
    pub prefix: String,
    pub k: usize,
    pub sampling: SamplingParams,
    /// Stop sequence hint so backends can cut generation near a step
    /// boundary. Truncation still happens locally either way.
    pub stop: Option<String>,
}

/// Samples candidate continuations from a multimodal generative model.
///
/// Returns at most `k` strings. Fewer (or none) means the backend could not
/// produce more; the search treats an empty batch as exhaustion, not an
/// error.
pub trait CandidateGenerator: Send + Sync {
    fn generate_candidates(
        &self,
        request: &GenerationRequest,
    ) -> Result<Vec<String>, ProviderError>;
    fn model_id(&self) -> &str;
}

/// Embeds text into the vector space used for prior similarity. A given
/// implementation must embed every input into the same dimension.
pub trait TextEmbedder: Send + Sync {
    fn embed_text(&self, text: &str) -> Result<Embedding, ProviderError>;
    fn model_id(&self) -> &str;
}

/// Scores image-text alignment as a raw cosine-style similarity in [-1, 1].
pub trait ImageTextScorer: Send + Sync {
    fn score_image_text(&self, image: &ImageRef, text: &str) -> Result<f64, ProviderError>;
    fn model_id(&self) -> &str;
}

/// The three providers a decode run needs, shareable across worker threads.
#[derive(Clone)]
pub struct ProviderSet {
    pub generator: Arc<dyn CandidateGenerator>,
    pub embedder: Arc<dyn TextEmbedder>,
    pub scorer: Arc<dyn ImageTextScorer>,
}

/// Which provider slot a descriptor configures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    Generator,
    Embedder,
    ImageTextScorer,
}

/// Declarative description of one provider endpoint, as it appears in job
/// configuration files. `endpoint = "mock"` selects the built-in
/// deterministic providers instead of HTTP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderDescriptor {
    /// Slot this descriptor fills; optional in config files because the slot
    /// is implied by the section it appears in.
    #[serde(default)]
    pub kind: Option<ProviderKind>,
    pub endpoint: String,
    pub model_id: String,
    /// Environment variable holding the bearer token. Falls back to
    /// `LPS_API_KEY`; unauthenticated if neither is set.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
}

fn default_timeout_secs() -> u64 {
    30
}
fn default_max_retries() -> u32 {
    2
}

impl ProviderDescriptor {
    pub fn new(endpoint: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            kind: None,
            endpoint: endpoint.into(),
            model_id: model_id.into(),
            auth_env: None,
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
        }
    }

    pub fn is_mock(&self) -> bool {
        self.endpoint == "mock"
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.endpoint.is_empty() {
            return Err(ProviderError::InvalidConfig {
                detail: "provider endpoint is empty".into(),
            });
        }
        if self.model_id.is_empty() {
            return Err(ProviderError::InvalidConfig {
                detail: "provider model_id is empty".into(),
            });
        }
        if self.timeout_secs == 0 {
            return Err(ProviderError::InvalidConfig {
                detail: "provider timeout must be positive".into(),
            });
        }
        if !self.is_mock() && !self.endpoint.starts_with("http") {
            return Err(ProviderError::InvalidConfig {
                detail: format!(
                    "endpoint {:?} is neither an http(s) URL nor \"mock\"",
                    self.endpoint
                ),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inline_image_identity_is_content_hash() {
        let a = ImageRef::from_bytes(vec![1, 2, 3], "image/png").unwrap();
        let b = ImageRef::from_bytes(vec![1, 2, 3], "image/jpeg").unwrap();
        let c = ImageRef::from_bytes(vec![9, 9], "image/png").unwrap();
        assert_eq!(a.identity().unwrap(), b.identity().unwrap());
        assert_ne!(a.identity().unwrap(), c.identity().unwrap());
    }

    #[test]
    fn path_and_inline_identities_agree_on_same_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        std::fs::write(&path, [7u8, 8, 9]).unwrap();
        let from_path = ImageRef::from_path(&path);
        let inline = ImageRef::from_bytes(vec![7, 8, 9], "image/png").unwrap();
        assert_eq!(from_path.identity().unwrap(), inline.identity().unwrap());
        assert_eq!(from_path.media_type(), "image/png");
    }

    #[test]
    fn empty_images_are_rejected() {
        assert!(matches!(
            ImageRef::from_bytes(vec![], "image/png"),
            Err(ProviderError::UnusableImage { .. })
        ));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jpg");
        std::fs::write(&path, []).unwrap();
        assert!(ImageRef::from_path(&path).identity().is_err());
    }

    #[test]
    fn transport_url_is_data_uri_for_local_images() {
        let img = ImageRef::from_bytes(vec![0xFF, 0xD8], "image/jpeg").unwrap();
        let url = img.as_transport_url().unwrap();
        assert!(url.starts_with("data:image/jpeg;base64,"));
        let remote = ImageRef::from_url("https://example.com/cat.png", "image/png");
        assert_eq!(
            remote.as_transport_url().unwrap(),
            "https://example.com/cat.png"
        );
    }

    #[test]
    fn sampling_validation_catches_out_of_range() {
        assert!(SamplingParams::default().validate().is_ok());
        assert!(SamplingParams::greedy().validate().is_ok());
        let bad = SamplingParams {
            top_p: 0.0,
            ..SamplingParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = SamplingParams {
            temperature: -0.1,
            ..SamplingParams::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn descriptor_validation() {
        let mut d = ProviderDescriptor::new("mock", "demo");
        assert!(d.validate().is_ok());
        assert!(d.is_mock());
        d.endpoint = "http://localhost:8080/v1".into();
        assert!(d.validate().is_ok());
        assert!(!d.is_mock());
        d.endpoint = "ftp://nope".into();
        assert!(d.validate().is_err());
        d.endpoint = "http://ok".into();
        d.timeout_secs = 0;
        assert!(d.validate().is_err());
    }

    #[test]
    fn descriptor_deserializes_with_defaults() {
        let d: ProviderDescriptor =
            toml::from_str("endpoint = \"mock\"\nmodel_id = \"demo\"").unwrap();
        assert_eq!(d.timeout_secs, 30);
        assert_eq!(d.max_retries, 2);
        assert_eq!(d.kind, None);
        assert_eq!(d.auth_env, None);
    }
}
