//! Retrieval keys and unit-normalized text embeddings.
//!
//! Two providers implement [`EmbeddingProvider`]: [`BuiltinEmbedder`], a
//! hashed bag-of-words encoder that needs no service, and [`RemoteEmbedder`],
//! a client for the `/embed` + `/health` HTTP protocol.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Instance;
use crate::limit::InFlightLimit;

pub const DEFAULT_BUILTIN_DIM: usize = 256;
pub const DEFAULT_TOKEN_BUDGET: usize = 512;
const MIN_BUILTIN_DIM: usize = 8;
const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("text has no alphanumeric tokens")]
    NoTokens,
    #[error("embedding is the zero vector")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid embedding config: {0}")]
    InvalidConfig(String),
    #[error("embedding service unreachable at {endpoint}: {message}")]
    Unreachable { endpoint: String, message: String },
    #[error("embedding service protocol violation: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyMode {
    /// Introduction, question and answer candidate.
    #[default]
    Triplet,
    /// Question and answer candidate only.
    QaOnly,
}

impl KeyMode {
    pub fn as_str(self) -> &'static str {
        match self {
            KeyMode::Triplet => "triplet",
            KeyMode::QaOnly => "qa_only",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetrievalKey {
    pub text: String,
    pub key_mode: KeyMode,
}

pub fn build_key(instance: &Instance, key_mode: KeyMode) -> RetrievalKey {
    let text = match key_mode {
        KeyMode::Triplet => format!(
            "{}\n{}\n{}",
            instance.introduction, instance.question, instance.answer_candidate
        ),
        KeyMode::QaOnly => format!("{}\n{}", instance.question, instance.answer_candidate),
    };
    RetrievalKey { text, key_mode }
}

/// Dense embedding. Vectors produced by providers are unit-normalized;
/// [`EmbeddingVector::from_values`] accepts arbitrary values so that
/// similarity can be computed on raw vectors too.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn from_values(values: Vec<f64>) -> Self {
        Self { values }
    }

    /// Scale `values` to unit Euclidean norm.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self, EmbeddingError> {
        let norm = l2_norm(&values);
        if norm == 0.0 || !norm.is_finite() {
            return Err(EmbeddingError::ZeroVector);
        }
        for v in &mut values {
            *v /= norm;
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= NORM_TOLERANCE
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }
}

fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok((a.dot(b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Keep the first `budget` whitespace-separated words, preserving the
/// original spacing of what is kept. Text within budget is returned as is.
pub fn truncate_words(text: &str, budget: usize) -> &str {
    let mut words = 0;
    let mut in_word = false;
    let mut last_word_end = 0;
    for (idx, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if in_word {
                in_word = false;
                last_word_end = idx;
            }
        } else if !in_word {
            if words == budget {
                return &text[..last_word_end];
            }
            in_word = true;
            words += 1;
        }
    }
    text
}

/// 64-bit FNV-1a; fixed so builtin vectors match across runs and platforms.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Lowercased maximal runs of alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Hashed bag-of-words with `1 + ln(tf)` weights and signed buckets.
pub fn builtin_embed(text: &str, dim: usize) -> Result<EmbeddingVector, EmbeddingError> {
    if dim < MIN_BUILTIN_DIM {
        return Err(EmbeddingError::InvalidConfig(format!(
            "builtin dim must be at least {MIN_BUILTIN_DIM}, got {dim}"
        )));
    }
    if text.trim().is_empty() {
        return Err(EmbeddingError::EmptyText);
    }
    // BTreeMap: accumulation order must not depend on hash seeds.
    let mut counts: BTreeMap<String, u32> = BTreeMap::new();
    for token in tokenize(text) {
        *counts.entry(token).or_default() += 1;
    }
    if counts.is_empty() {
        return Err(EmbeddingError::NoTokens);
    }
    let mut values = vec![0.0; dim];
    for (token, tf) in &counts {
        let hash = fnv1a64(token.as_bytes());
        let bucket = (hash % dim as u64) as usize;
        let sign = if hash >> 63 == 0 { 1.0 } else { -1.0 };
        values[bucket] += sign * (1.0 + f64::from(*tf).ln());
    }
    EmbeddingVector::normalized(values)
}

pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    fn token_budget(&self) -> usize;

    /// Stable description of everything that changes the produced vectors.
    fn describe(&self) -> String;

    /// Encode text that has already been truncated to the token budget.
    fn encode(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError>;

    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        texts.iter().map(|t| self.encode(t)).collect()
    }
}

pub fn embed_text(
    provider: &dyn EmbeddingProvider,
    key: &RetrievalKey,
) -> Result<EmbeddingVector, EmbeddingError> {
    if key.text.trim().is_empty() {
        return Err(EmbeddingError::EmptyText);
    }
    let vector = provider.encode(truncate_words(&key.text, provider.token_budget()))?;
    check_output(provider, &vector)?;
    Ok(vector)
}

pub fn embed_keys(
    provider: &dyn EmbeddingProvider,
    keys: &[RetrievalKey],
) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
    if keys.iter().any(|k| k.text.trim().is_empty()) {
        return Err(EmbeddingError::EmptyText);
    }
    let budget = provider.token_budget();
    let texts: Vec<&str> = keys.iter().map(|k| truncate_words(&k.text, budget)).collect();
    let vectors = provider.encode_batch(&texts)?;
    if vectors.len() != keys.len() {
        return Err(EmbeddingError::Protocol(format!(
            "asked for {} vectors, got {}",
            keys.len(),
            vectors.len()
        )));
    }
    for v in &vectors {
        check_output(provider, v)?;
    }
    Ok(vectors)
}

fn check_output(provider: &dyn EmbeddingProvider, v: &EmbeddingVector) -> Result<(), EmbeddingError> {
    if v.dim() != provider.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: provider.dim(),
            found: v.dim(),
        });
    }
    if !v.is_unit() {
        return Err(EmbeddingError::Protocol(format!(
            "vector norm {} is not 1",
            v.norm()
        )));
    }
    Ok(())
}

/// Digest identifying a provider together with the key mode used to build
/// the retrieval keys; stored in the index header.
pub fn fingerprint(provider: &dyn EmbeddingProvider, key_mode: KeyMode) -> String {
    let material = format!("{}|key_mode={}", provider.describe(), key_mode.as_str());
    hex::encode(Sha256::digest(material.as_bytes()))
}

#[derive(Debug, Clone, Copy)]
pub struct BuiltinEmbedder {
    dim: usize,
    token_budget: usize,
}

impl BuiltinEmbedder {
    pub fn new(dim: usize, token_budget: usize) -> Result<Self, EmbeddingError> {
        if dim < MIN_BUILTIN_DIM {
            return Err(EmbeddingError::InvalidConfig(format!(
                "builtin dim must be at least {MIN_BUILTIN_DIM}, got {dim}"
            )));
        }
        if token_budget == 0 {
            return Err(EmbeddingError::InvalidConfig("token_budget must be positive".into()));
        }
        Ok(Self { dim, token_budget })
    }
}

impl Default for BuiltinEmbedder {
    fn default() -> Self {
        Self {
            dim: DEFAULT_BUILTIN_DIM,
            token_budget: DEFAULT_TOKEN_BUDGET,
        }
    }
}

impl EmbeddingProvider for BuiltinEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn token_budget(&self) -> usize {
        self.token_budget
    }

    fn describe(&self) -> String {
        format!("builtin|fnv1a-bow-v1|dim={}|budget={}", self.dim, self.token_budget)
    }

    fn encode(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        builtin_embed(text, self.dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingProviderKind {
    #[default]
    Builtin,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingProviderConfig {
    pub kind: EmbeddingProviderKind,
    pub dim: usize,
    pub endpoint: Option<String>,
    pub token_budget: usize,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
}

impl Default for EmbeddingProviderConfig {
    fn default() -> Self {
        Self {
            kind: EmbeddingProviderKind::Builtin,
            dim: DEFAULT_BUILTIN_DIM,
            endpoint: None,
            token_budget: DEFAULT_TOKEN_BUDGET,
            max_in_flight: 4,
            timeout_secs: 60,
        }
    }
}

impl EmbeddingProviderConfig {
    pub fn build(&self) -> Result<Box<dyn EmbeddingProvider>, EmbeddingError> {
        if self.token_budget == 0 {
            return Err(EmbeddingError::InvalidConfig("token_budget must be positive".into()));
        }
        match self.kind {
            EmbeddingProviderKind::Builtin => Ok(Box::new(BuiltinEmbedder::new(self.dim, self.token_budget)?)),
            EmbeddingProviderKind::Remote => {
                let endpoint = self.endpoint.clone().ok_or_else(|| {
                    EmbeddingError::InvalidConfig("remote embedding provider needs an endpoint".into())
                })?;
                Ok(Box::new(RemoteEmbedder::connect(
                    &endpoint,
                    self.token_budget,
                    self.max_in_flight,
                    Duration::from_secs(self.timeout_secs),
                )?))
            }
        }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
    max_tokens: usize,
}

#[derive(Deserialize)]
struct EmbedResponse {
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct HealthResponse {
    status: String,
    dim: usize,
}

/// Client for the embedding service: `GET /health`, `POST /embed`.
pub struct RemoteEmbedder {
    endpoint: String,
    dim: usize,
    token_budget: usize,
    agent: ureq::Agent,
    limit: InFlightLimit,
}

impl RemoteEmbedder {
    /// Query `/health` to learn the service dimension.
    pub fn connect(
        endpoint: &str,
        token_budget: usize,
        max_in_flight: usize,
        timeout: Duration,
    ) -> Result<Self, EmbeddingError> {
        if token_budget == 0 {
            return Err(EmbeddingError::InvalidConfig("token_budget must be positive".into()));
        }
        let endpoint = endpoint.trim_end_matches('/').to_string();
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let unreachable = |e: ureq::Error| EmbeddingError::Unreachable {
            endpoint: endpoint.clone(),
            message: e.to_string(),
        };
        let mut response = agent
            .get(format!("{endpoint}/health"))
            .call()
            .map_err(unreachable)?;
        if !response.status().is_success() {
            return Err(EmbeddingError::Unreachable {
                endpoint: endpoint.clone(),
                message: format!("health check returned HTTP {}", response.status()),
            });
        }
        let health: HealthResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| EmbeddingError::Protocol(format!("bad /health body: {e}")))?;
        if health.status != "ok" {
            return Err(EmbeddingError::Unreachable {
                endpoint,
                message: format!("service status is {:?}", health.status),
            });
        }
        if health.dim == 0 {
            return Err(EmbeddingError::Protocol("service reported dim 0".into()));
        }
        Ok(Self {
            endpoint,
            dim: health.dim,
            token_budget,
            agent,
            limit: InFlightLimit::new(max_in_flight),
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn token_budget(&self) -> usize {
        self.token_budget
    }

    fn describe(&self) -> String {
        format!("remote|{}|dim={}|budget={}", self.endpoint, self.dim, self.token_budget)
    }

    fn encode(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let mut out = self.encode_batch(&[text])?;
        Ok(out.remove(0))
    }

    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let _permit = self.limit.acquire();
        let request = EmbedRequest {
            texts,
            max_tokens: self.token_budget,
        };
        let mut response = self
            .agent
            .post(format!("{}/embed", self.endpoint))
            .send_json(&request)
            .map_err(|e| EmbeddingError::Unreachable {
                endpoint: self.endpoint.clone(),
                message: e.to_string(),
            })?;
        if !response.status().is_success() {
            return Err(EmbeddingError::Protocol(format!(
                "/embed returned HTTP {}",
                response.status()
            )));
        }
        let body: EmbedResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| EmbeddingError::Protocol(format!("bad /embed body: {e}")))?;
        if body.dim != self.dim {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.dim,
                found: body.dim,
            });
        }
        if body.vectors.len() != texts.len() {
            return Err(EmbeddingError::Protocol(format!(
                "sent {} texts, received {} vectors",
                texts.len(),
                body.vectors.len()
            )));
        }
        body.vectors
            .into_iter()
            .map(|values| {
                if values.len() != self.dim {
                    return Err(EmbeddingError::DimensionMismatch {
                        expected: self.dim,
                        found: values.len(),
                    });
                }
                EmbeddingVector::normalized(values)
            })
            .collect()
    }
}
