use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{ConsensusError, EmbeddingVector};
use crate::llm_gateway::{sha256_hex, with_retries, EmbeddingTransport, JsonCache, RetryPolicy, TransportError};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding endpoint failed after {attempts} attempt(s): {source}")]
    Transport {
        attempts: u32,
        #[source]
        source: TransportError,
    },
    #[error(transparent)]
    Vector(#[from] ConsensusError),
    #[error("cache error: {0}")]
    Cache(#[from] std::io::Error),
}

#[derive(Debug, Serialize, Deserialize)]
struct CachedEmbedding {
    model_id: String,
    text_sha256: String,
    values: Vec<f64>,
}

/// Embeds texts through a pluggable endpoint, L2-normalizing and caching by
/// (embedding model id, text hash).
pub struct EmbeddingClient {
    transport: Arc<dyn EmbeddingTransport>,
    model_id: String,
    cache: Option<JsonCache>,
    retry: RetryPolicy,
    network_calls: AtomicUsize,
}

impl EmbeddingClient {
    pub fn new(
        transport: Arc<dyn EmbeddingTransport>,
        model_id: impl Into<String>,
        cache: Option<JsonCache>,
        retry: RetryPolicy,
    ) -> Self {
        Self {
            transport,
            model_id: model_id.into(),
            cache,
            retry,
            network_calls: AtomicUsize::new(0),
        }
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::SeqCst)
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let text_hash = sha256_hex(&[text]);
        let key = sha256_hex(&[&self.model_id, &text_hash]);
        if let Some(hit) = self
            .cache
            .as_ref()
            .and_then(|c| c.get::<CachedEmbedding>(&key))
            .filter(|h| h.model_id == self.model_id)
        {
            return Ok(EmbeddingVector::from_raw(hit.values)?);
        }
        let (result, attempts) = with_retries(&self.retry, || {
            self.network_calls.fetch_add(1, Ordering::SeqCst);
            self.transport.embed(&self.model_id, text)
        });
        let raw = result.map_err(|source| EmbedError::Transport { attempts, source })?;
        let vector = EmbeddingVector::from_raw(raw.clone())?;
        if let Some(cache) = &self.cache {
            cache.put(
                &key,
                &CachedEmbedding {
                    model_id: self.model_id.clone(),
                    text_sha256: text_hash,
                    values: raw,
                },
            )?;
        }
        Ok(vector)
    }
}

/// Offline embedder: lower-cased word tokens hashed into a fixed number of
/// signed buckets. Texts sharing vocabulary get high cosine similarity.
pub struct HashingEmbedder {
    dim: usize,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim: dim.max(2) }
    }
}

impl EmbeddingTransport for HashingEmbedder {
    fn embed(&self, _model_id: &str, text: &str) -> Result<Vec<f64>, TransportError> {
        let mut v = vec![0.0; self.dim];
        for token in text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            let digest = Sha256::digest(token.to_lowercase().as_bytes());
            let bucket = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")) as usize % self.dim;
            let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        if v.iter().all(|x| *x == 0.0) {
            v[0] = 1.0;
        }
        Ok(v)
    }
}
