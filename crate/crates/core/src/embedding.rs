//! Text embeddings behind a provider contract.
//!
//! Two providers ship with the crate:
//!
//! * [`LocalEmbedder`]: a deterministic hashed bag-of-words model. Text is
//!   lowercased and split on non-alphanumeric characters; each token is hashed
//!   with FNV-1a (64 bit, offset basis `0xcbf29ce484222325`, prime
//!   `0x100000001b3`) over its UTF-8 bytes and counted in bucket
//!   `hash % dim`. The count vector is L2-normalized. It needs no network and
//!   is stable across processes and platforms.
//! * [`RemoteEmbedder`]: a client for an embeddings HTTP endpoint accepting
//!   `{"model": ..., "input": [...]}` and returning one vector per input.

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LOCAL_EMBEDDER_ID: &str = "local-hash-v1";
pub const DEFAULT_LOCAL_DIM: usize = 256;

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("invalid embedding vector: {0}")]
    InvalidVector(&'static str),
}

/// A finite, non-empty vector of `f64` components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::InvalidVector("empty vector"));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(EmbedError::InvalidVector("non-finite component"));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim.max(1)])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = EmbedError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

/// Cosine similarity; 0.0 when either vector has zero norm.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedderDescriptor {
    pub id: String,
    pub dim: usize,
}

#[async_trait]
pub trait Embedder: Send + Sync {
    fn descriptor(&self) -> &EmbedderDescriptor;

    async fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;

    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let mut out = Vec::with_capacity(texts.len());
        for t in texts {
            out.push(self.embed(t).await?);
        }
        Ok(out)
    }
}

pub fn fnv1a_64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET_BASIS, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

pub fn local_embed(text: &str, dim: usize) -> EmbeddingVector {
    let dim = dim.max(1);
    let mut counts = vec![0.0f64; dim];
    let lower = text.to_lowercase();
    for token in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        let bucket = (fnv1a_64(token.as_bytes()) % dim as u64) as usize;
        counts[bucket] += 1.0;
    }
    let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
    if norm > 0.0 {
        counts.iter_mut().for_each(|c| *c /= norm);
    }
    EmbeddingVector(counts)
}

#[derive(Debug, Clone)]
pub struct LocalEmbedder {
    descriptor: EmbedderDescriptor,
}

impl LocalEmbedder {
    pub fn new(dim: usize) -> Self {
        Self {
            descriptor: EmbedderDescriptor {
                id: LOCAL_EMBEDDER_ID.to_string(),
                dim: dim.max(1),
            },
        }
    }
}

impl Default for LocalEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_LOCAL_DIM)
    }
}

#[async_trait]
impl Embedder for LocalEmbedder {
    fn descriptor(&self) -> &EmbedderDescriptor {
        &self.descriptor
    }

    async fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        Ok(local_embed(text, self.descriptor.dim))
    }
}

#[derive(Debug, Clone)]
pub struct RemoteEmbedderConfig {
    pub url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub dim: usize,
}

impl RemoteEmbedderConfig {
    /// Reads `EMBED_API_URL`, `EMBED_API_KEY` and `EMBED_MODEL`.
    pub fn from_env(dim: usize) -> Option<Self> {
        Some(Self {
            url: std::env::var("EMBED_API_URL").ok()?,
            api_key: std::env::var("EMBED_API_KEY").ok(),
            model: std::env::var("EMBED_MODEL").ok()?,
            dim,
        })
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: Vec<f64>,
    #[serde(default)]
    index: Option<usize>,
}

pub struct RemoteEmbedder {
    config: RemoteEmbedderConfig,
    descriptor: EmbedderDescriptor,
    http: reqwest::Client,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteEmbedderConfig) -> Self {
        let descriptor = EmbedderDescriptor {
            id: config.model.clone(),
            dim: config.dim,
        };
        Self {
            config,
            descriptor,
            http: reqwest::Client::new(),
        }
    }
}

#[async_trait]
impl Embedder for RemoteEmbedder {
    fn descriptor(&self) -> &EmbedderDescriptor {
        &self.descriptor
    }

    async fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut out = self.embed_batch(&[text.to_string()]).await?;
        out.pop()
            .ok_or_else(|| EmbedError::ProviderUnavailable("empty embedding response".into()))
    }

    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let unavailable = |e: reqwest::Error| EmbedError::ProviderUnavailable(e.to_string());
        let mut req = self.http.post(&self.config.url).json(&EmbedRequest {
            model: &self.config.model,
            input: texts,
        });
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(unavailable)?;
        let resp = resp.error_for_status().map_err(unavailable)?;
        let mut body: EmbedResponse = resp.json().await.map_err(unavailable)?;
        if body.data.len() != texts.len() {
            return Err(EmbedError::ProviderUnavailable(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                body.data.len()
            )));
        }
        if body.data.iter().all(|d| d.index.is_some()) {
            body.data.sort_by_key(|d| d.index);
        }
        body.data
            .into_iter()
            .map(|d| {
                if d.embedding.len() != self.descriptor.dim {
                    return Err(EmbedError::DimensionMismatch {
                        expected: self.descriptor.dim,
                        actual: d.embedding.len(),
                    });
                }
                EmbeddingVector::new(d.embedding)
            })
            .collect()
    }
}
