//! Embedding vectors, cosine similarity, and the embedders that produce them.
//!
//! Two embedders ship with the crate:
//!
//! * [`OfflineEmbedder`] is a signed feature-hashing bag-of-words model. It needs
//!   no network, is bit-reproducible across platforms, and is what every hermetic
//!   test and `--mock` run uses.
//! * [`RemoteEmbedder`] posts `{"input": .., "model": ..}` to a configured HTTP
//!   endpoint and accepts any response carrying a numeric array.
//!
//! # Offline hashing rule
//!
//! Text is lowercased and split on Unicode whitespace. Leading and trailing
//! characters that are neither alphanumeric nor `_` are stripped from each token;
//! tokens that become empty are dropped. Each remaining token is hashed with
//! 64-bit FNV-1a, starting from the standard offset basis XOR [`HASH_SEED`]. The
//! bucket is `hash % dimension`; the sign is `+1` when bit 63 of the hash is
//! clear and `-1` otherwise. Each token adds `sign * weight` to its bucket,
//! where the weight is [`FUNCTION_WORD_WEIGHT`] for tokens in
//! [`FUNCTION_WORDS`] and `1.0` otherwise. The vector is then L2-normalised.
//! Text with no tokens maps to the zero vector.

use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default dimension of the offline embedder.
pub const DEFAULT_OFFLINE_DIMENSION: usize = 256;

/// Smallest dimension the offline embedder accepts.
pub const MIN_OFFLINE_DIMENSION: usize = 16;

/// Seed mixed into the FNV-1a offset basis by the offline embedder.
pub const HASH_SEED: u64 = 0x5e6a_7e00_c051_4e01;

/// Common English function words, down-weighted by the offline embedder.
pub const FUNCTION_WORDS: &[&str] = &[
    "a", "about", "actually", "an", "and", "around", "as", "at", "be", "been", "by", "called",
    "for", "from", "guess", "her", "his", "i", "in", "is", "it", "its", "just", "me", "my",
    "named", "of", "on", "our", "probably", "really", "so", "that", "the", "their", "think",
    "this", "to", "very", "was", "we", "were", "which", "with",
];

/// Weight of a function word relative to a content word.
pub const FUNCTION_WORD_WEIGHT: f64 = 0.25;

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Slack allowed when comparing a similarity against a threshold.
///
/// Cosine of a vector with itself can land a few ulps below 1.0.
pub const SIMILARITY_EPSILON: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("embedding provider unavailable: {reason}")]
    ProviderUnavailable {
        reason: String,
        retry_after_secs: Option<u64>,
    },

    #[error("invalid embedder configuration: {0}")]
    InvalidConfig(String),
}

/// A dense embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(dimension: usize) -> Self {
        Self(vec![0.0; dimension])
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|v| v * factor).collect())
    }
}

impl From<Vec<f64>> for EmbeddingVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

/// Cosine similarity of two vectors of equal dimension.
///
/// Returns 0 when either vector has zero norm. The result is clamped to
/// `[-1, 1]` to absorb rounding.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    if a.dimension() != b.dimension() {
        return Err(EmbedError::DimensionMismatch {
            expected: a.dimension(),
            actual: b.dimension(),
        });
    }
    let mut dot = 0.0;
    let mut norm_a = 0.0;
    let mut norm_b = 0.0;
    for (x, y) in a.values().iter().zip(b.values()) {
        dot += x * y;
        norm_a += x * x;
        norm_b += y * y;
    }
    if norm_a == 0.0 || norm_b == 0.0 {
        return Ok(0.0);
    }
    // sqrt of the product keeps the computation symmetric in (a, b).
    let sim = dot / (norm_a * norm_b).sqrt();
    Ok(sim.clamp(-1.0, 1.0))
}

/// Anything that turns text into an [`EmbeddingVector`].
pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;

    /// The dimension, once known.
    fn dimension(&self) -> Option<usize>;

    /// Stable identifier; stores refuse to mix vectors from different embedders.
    fn id(&self) -> String;
}

impl<E: Embedder + ?Sized> Embedder for Arc<E> {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        (**self).embed(text)
    }

    fn dimension(&self) -> Option<usize> {
        (**self).dimension()
    }

    fn id(&self) -> String {
        (**self).id()
    }
}

/// Cosine similarity of two texts under one embedder.
pub fn text_similarity(embedder: &dyn Embedder, a: &str, b: &str) -> Result<f64, EmbedError> {
    let va = embedder.embed(a)?;
    let vb = embedder.embed(b)?;
    cosine_similarity(&va, &vb)
}

/// Lowercased tokens as seen by the offline embedder.
pub fn hashing_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().filter_map(|raw| {
        let token = raw
            .trim_matches(|c: char| !(c.is_alphanumeric() || c == '_'))
            .to_lowercase();
        (!token.is_empty()).then_some(token)
    })
}

fn fnv1a_seeded(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET_BASIS ^ HASH_SEED;
    for byte in bytes {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Deterministic feature-hashing embedder. See the module docs for the rule.
#[derive(Debug, Clone)]
pub struct OfflineEmbedder {
    dimension: usize,
}

impl OfflineEmbedder {
    pub fn new(dimension: usize) -> Result<Self, EmbedError> {
        if dimension < MIN_OFFLINE_DIMENSION {
            return Err(EmbedError::InvalidConfig(format!(
                "offline embedder dimension must be at least {MIN_OFFLINE_DIMENSION}, got {dimension}"
            )));
        }
        Ok(Self { dimension })
    }

    /// Bucket and sign for one (already normalised) token.
    pub fn bucket(&self, token: &str) -> (usize, f64) {
        let hash = fnv1a_seeded(token.as_bytes());
        let bucket = (hash % self.dimension as u64) as usize;
        let sign = if hash >> 63 == 0 { 1.0 } else { -1.0 };
        (bucket, sign)
    }

    pub fn embed_text(&self, text: &str) -> EmbeddingVector {
        let mut values = vec![0.0; self.dimension];
        for token in hashing_tokens(text) {
            let (bucket, sign) = self.bucket(&token);
            let weight = if FUNCTION_WORDS.binary_search(&token.as_str()).is_ok() {
                FUNCTION_WORD_WEIGHT
            } else {
                1.0
            };
            values[bucket] += sign * weight;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut values {
                *v /= norm;
            }
        }
        EmbeddingVector(values)
    }
}

impl Default for OfflineEmbedder {
    fn default() -> Self {
        Self {
            dimension: DEFAULT_OFFLINE_DIMENSION,
        }
    }
}

impl Embedder for OfflineEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        Ok(self.embed_text(text))
    }

    fn dimension(&self) -> Option<usize> {
        Some(self.dimension)
    }

    fn id(&self) -> String {
        format!("offline-fnv1a-{}", self.dimension)
    }
}

/// Connection settings for a hosted embedding API.
#[derive(Clone)]
pub struct RemoteEmbedderConfig {
    pub endpoint: String,
    pub model: String,
    pub credential: Option<crate::config::Secret>,
    pub timeout: Duration,
}

impl std::fmt::Debug for RemoteEmbedderConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteEmbedderConfig")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("credential", &self.credential)
            .field("timeout", &self.timeout)
            .finish()
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    input: &'a str,
    model: &'a str,
}

/// HTTP+JSON embedding client.
///
/// The first successful response fixes the dimension; any later response with
/// a different length is rejected with [`EmbedError::DimensionMismatch`].
pub struct RemoteEmbedder {
    config: RemoteEmbedderConfig,
    client: reqwest::blocking::Client,
    dimension: Mutex<Option<usize>>,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteEmbedderConfig) -> Result<Self, EmbedError> {
        if config.endpoint.trim().is_empty() {
            return Err(EmbedError::InvalidConfig("endpoint URL is empty".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| EmbedError::InvalidConfig(e.to_string()))?;
        Ok(Self {
            config,
            client,
            dimension: Mutex::new(None),
        })
    }

    fn fetch(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        let mut request = self.client.post(&self.config.endpoint).json(&EmbedRequest {
            input: text,
            model: &self.config.model,
        });
        if let Some(secret) = &self.config.credential {
            request = request.bearer_auth(secret.expose());
        }
        let response = request.send().map_err(|e| EmbedError::ProviderUnavailable {
            reason: format!("request failed: {}", e.without_url()),
            retry_after_secs: Some(5),
        })?;
        let status = response.status();
        if !status.is_success() {
            let retry_after_secs = response
                .headers()
                .get(reqwest::header::RETRY_AFTER)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.parse().ok())
                .or(Some(5));
            return Err(EmbedError::ProviderUnavailable {
                reason: format!("HTTP status {status}"),
                retry_after_secs,
            });
        }
        let body: serde_json::Value =
            response.json().map_err(|e| EmbedError::ProviderUnavailable {
                reason: format!("unreadable response body: {}", e.without_url()),
                retry_after_secs: None,
            })?;
        find_numeric_array(&body).ok_or_else(|| EmbedError::ProviderUnavailable {
            reason: "response contains no numeric array".into(),
            retry_after_secs: None,
        })
    }
}

/// Depth-first search for the first non-empty array made only of numbers.
fn find_numeric_array(value: &serde_json::Value) -> Option<Vec<f64>> {
    match value {
        serde_json::Value::Array(items) => {
            if !items.is_empty() && items.iter().all(serde_json::Value::is_number) {
                return items.iter().map(serde_json::Value::as_f64).collect();
            }
            items.iter().find_map(find_numeric_array)
        }
        serde_json::Value::Object(map) => {
            for key in ["embedding", "data", "embeddings", "vector"] {
                if let Some(found) = map.get(key).and_then(find_numeric_array) {
                    return Some(found);
                }
            }
            map.values().find_map(find_numeric_array)
        }
        _ => None,
    }
}

impl Embedder for RemoteEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let values = self.fetch(text)?;
        let mut dimension = self.dimension.lock();
        match *dimension {
            Some(expected) if expected != values.len() => {
                return Err(EmbedError::DimensionMismatch {
                    expected,
                    actual: values.len(),
                })
            }
            Some(_) => {}
            None => *dimension = Some(values.len()),
        }
        Ok(EmbeddingVector(values))
    }

    fn dimension(&self) -> Option<usize> {
        *self.dimension.lock()
    }

    fn id(&self) -> String {
        format!("remote:{}:{}", self.config.endpoint, self.config.model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec())
    }

    #[test]
    fn cosine_identity_orthogonal_and_diagonal() {
        let a = v(&[0.3, -1.2, 4.0]);
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        let diag = cosine_similarity(&v(&[1.0, 1.0]), &v(&[1.0, 0.0])).unwrap();
        assert!((diag - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn cosine_zero_vector_is_zero() {
        assert_eq!(cosine_similarity(&v(&[0.0, 0.0]), &v(&[1.0, 2.0])).unwrap(), 0.0);
    }

    #[test]
    fn cosine_rejects_mismatched_dimensions() {
        let err = cosine_similarity(&v(&[1.0]), &v(&[1.0, 2.0])).unwrap_err();
        assert_eq!(
            err,
            EmbedError::DimensionMismatch {
                expected: 1,
                actual: 2
            }
        );
    }

    #[test]
    fn offline_is_deterministic_and_order_invariant() {
        let e = OfflineEmbedder::default();
        assert_eq!(e.embed_text("the cat sat"), e.embed_text("the cat sat"));
        let s = cosine_similarity(&e.embed_text("alpha beta"), &e.embed_text("beta alpha")).unwrap();
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn offline_empty_text_is_zero_vector() {
        let e = OfflineEmbedder::default();
        let z = e.embed_text("   \n\t ");
        assert_eq!(z.dimension(), DEFAULT_OFFLINE_DIMENSION);
        assert!(z.is_zero());
    }

    #[test]
    fn offline_output_is_unit_norm() {
        let e = OfflineEmbedder::new(64).unwrap();
        let x = e.embed_text("Born in Lyon in 1982, moved to Paris.");
        assert!((x.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn offline_rejects_small_dimension() {
        assert!(OfflineEmbedder::new(15).is_err());
        assert!(OfflineEmbedder::new(16).is_ok());
    }

    #[test]
    fn edge_punctuation_is_ignored() {
        let e = OfflineEmbedder::default();
        assert_eq!(e.embed_text("Paris."), e.embed_text("paris"));
    }

    #[test]
    fn function_words_are_sorted_and_down_weighted() {
        assert!(FUNCTION_WORDS.windows(2).all(|w| w[0] < w[1]));
        let e = OfflineEmbedder::default();
        let filler = cosine_similarity(&e.embed_text("Biscuit"), &e.embed_text("it was Biscuit")).unwrap();
        let content = cosine_similarity(&e.embed_text("Biscuit"), &e.embed_text("Pepper Biscuit")).unwrap();
        assert!(filler > content, "{filler} vs {content}");
    }

    #[test]
    fn numeric_array_search_handles_common_shapes() {
        let openai = serde_json::json!({"data": [{"embedding": [0.5, 1.0], "index": 0}]});
        assert_eq!(find_numeric_array(&openai), Some(vec![0.5, 1.0]));
        let bare = serde_json::json!([1, 2, 3]);
        assert_eq!(find_numeric_array(&bare), Some(vec![1.0, 2.0, 3.0]));
        assert_eq!(find_numeric_array(&serde_json::json!({"x": "y"})), None);
    }
}
