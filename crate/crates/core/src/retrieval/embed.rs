//! Query embedding sources.
//!
//! Pool embeddings normally come from a file written by the retriever
//! trainer. Queries are built at inference time from the predicted state, so
//! they go through an [`Embedder`]: either a local embedding service or the
//! deterministic [`HashingEmbedder`] used for offline runs and fixtures.

use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RetrievalError;

pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, RetrievalError>;
}

/// Random projection of a bag of lowercase word tokens.
#[derive(Clone, Debug)]
pub struct HashingEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl HashingEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }

    fn token_vector(&self, token: &str, out: &mut [f64]) {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(token.as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        for v in out.iter_mut() {
            *v += rng.gen_range(-1.0..1.0);
        }
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let lower = text.to_lowercase();
        let mut any = false;
        for token in lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            self.token_vector(token, &mut v);
            any = true;
        }
        if !any && self.dim > 0 {
            v[0] = 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl Embedder for HashingEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, RetrievalError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Client for a local embedding endpoint: `{texts}` in, `{vectors}` out.
pub struct ServiceEmbedder {
    url: String,
    client: reqwest::blocking::Client,
}

impl ServiceEmbedder {
    pub fn new(url: impl Into<String>) -> Result<Self, RetrievalError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| RetrievalError::Service(e.to_string()))?;
        Ok(Self {
            url: url.into(),
            client,
        })
    }
}

impl Embedder for ServiceEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, RetrievalError> {
        let resp = self
            .client
            .post(&self.url)
            .json(&EmbedRequest { texts })
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| RetrievalError::Service(e.to_string()))?;
        let body: EmbedResponse = resp
            .json()
            .map_err(|e| RetrievalError::Service(format!("malformed response: {e}")))?;
        if body.vectors.len() != texts.len() {
            return Err(RetrievalError::Service(format!(
                "asked for {} vectors, got {}",
                texts.len(),
                body.vectors.len()
            )));
        }
        Ok(body.vectors)
    }
}
