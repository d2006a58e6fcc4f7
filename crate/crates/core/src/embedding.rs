//! Embedding providers: the offline feature-hashing embedder and a remote HTTP client.

use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, ProviderError, Result};
use crate::evaluation::tokenize;
use crate::provider::{JsonClient, RetryPolicy};

pub const RETRIEVAL_DIM: usize = 384;
pub const EVALUATION_DIM: usize = 768;

pub trait EmbeddingProvider: Send + Sync {
    /// Names the producing profile; vectors from different ids never mix in one index.
    fn id(&self) -> &str;
    fn dimension(&self) -> usize;
    fn batch_limit(&self) -> usize;
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError>;
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Offline embedder: signed feature hashing of lowercased word unigrams and
/// bigrams into `dimension` buckets, then L2 normalization.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    id: String,
    dimension: usize,
}

impl HashingEmbedder {
    pub fn new(profile: &str, dimension: usize) -> Self {
        HashingEmbedder {
            id: format!("hashing-{profile}-{dimension}"),
            dimension,
        }
    }

    pub fn retrieval() -> Self {
        Self::new("retrieval", RETRIEVAL_DIM)
    }

    pub fn evaluation() -> Self {
        Self::new("evaluation", EVALUATION_DIM)
    }

    /// Unnormalized signed term counts.
    pub fn raw_counts(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0f64; self.dimension];
        let mut add = |feature: &str| {
            let h = fnv1a64(feature.as_bytes());
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            v[(h % self.dimension as u64) as usize] += sign;
        };
        let tokens = tokenize(text);
        if tokens.is_empty() {
            // Punctuation-only text still needs a deterministic direction.
            let whole = text.trim().to_lowercase();
            if !whole.is_empty() {
                add(&whole);
            }
        }
        for t in &tokens {
            add(t);
        }
        for w in tokens.windows(2) {
            add(&format!("{} {}", w[0], w[1]));
        }
        v
    }

    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut v = self.raw_counts(text);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // Signed collisions cancelled out; fall back to a one-hot of the text hash.
            let h = fnv1a64(text.as_bytes());
            v[(h % self.dimension as u64) as usize] = 1.0;
            return v.into_iter().map(|x| x as f32).collect();
        }
        v.into_iter().map(|x| (x / norm) as f32).collect()
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn batch_limit(&self) -> usize {
        256
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
    #[serde(default)]
    dimension: Option<usize>,
}

/// Remote embedder speaking `POST /embed {"texts": [...]}` → `{"vectors": [...], "dimension": D}`.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    id: String,
    client: JsonClient,
    dimension: usize,
    batch_limit: usize,
}

impl HttpEmbedder {
    pub fn new(profile: &str, url: &str, api_key: Option<String>, dimension: usize, batch_limit: usize, timeout: Duration) -> Self {
        let client = JsonClient::new(url, api_key, timeout);
        HttpEmbedder {
            id: format!("http-{profile}-{dimension}@{}", client.base_url()),
            client,
            dimension,
            batch_limit: batch_limit.max(1),
        }
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn batch_limit(&self) -> usize {
        self.batch_limit
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        let resp: EmbedResponse = self.client.post("/embed", &EmbedRequest { texts })?;
        if let Some(d) = resp.dimension.filter(|&d| d != self.dimension) {
            return Err(ProviderError::DimensionMismatch { expected: self.dimension, actual: d });
        }
        Ok(resp.vectors)
    }
}

/// L2-normalizes in place; fails on zero or non-finite vectors.
pub fn normalize(v: &mut [f32]) -> bool {
    if v.iter().any(|x| !x.is_finite()) {
        return false;
    }
    let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    if norm == 0.0 {
        return false;
    }
    for x in v.iter_mut() {
        *x = (f64::from(*x) / norm) as f32;
    }
    true
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

/// Cosine similarity; zero vectors score 0. Never returns -0.0, so equal
/// scores stay equal under `total_cmp`.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0) + 0.0
}

/// Embeds `texts` in provider-sized batches (fetched concurrently, order kept),
/// retrying transport failures and normalizing every returned vector.
pub fn embed_texts(provider: &dyn EmbeddingProvider, texts: &[String], retry: &RetryPolicy) -> Result<Vec<Vec<f32>>> {
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(Error::EmptyText(i));
    }
    let dim = provider.dimension();
    let batches: Vec<&[String]> = texts.chunks(provider.batch_limit().max(1)).collect();
    let results: Vec<Result<Vec<Vec<f32>>>> = batches
        .par_iter()
        .map(|batch| {
            let vectors = retry.run(provider.id(), || provider.embed_batch(batch))?;
            if vectors.len() != batch.len() {
                return Err(ProviderError::Malformed(format!("{} vectors for {} texts", vectors.len(), batch.len())).into());
            }
            vectors
                .into_iter()
                .zip(batch.iter())
                .map(|(mut v, text)| {
                    if v.len() != dim {
                        return Err(Error::DimensionMismatch { expected: dim, actual: v.len() });
                    }
                    if !normalize(&mut v) {
                        return Err(Error::DegenerateVector(text.chars().take(40).collect()));
                    }
                    Ok(v)
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(texts.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}
