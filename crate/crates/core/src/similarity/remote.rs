use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{EmbeddingProvider, SimilarityError, UNIT_NORM_TOLERANCE};

/// Largest batch the embedding service accepts in one request.
pub const MAX_BATCH: usize = 256;

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
    granularity: &'static str,
}

#[derive(Deserialize)]
struct EmbedResponse<V> {
    dim: usize,
    vectors: Vec<V>,
}

/// Client for a `POST /embed` encoder service.
///
/// Unit norm is the server's job; every vector is re-checked here and a
/// response that drifts past [`UNIT_NORM_TOLERANCE`] is rejected.
pub struct HttpEmbeddingProvider {
    endpoint: String,
    client: reqwest::blocking::Client,
    // 0 until the first response fixes the dimension
    dim: AtomicUsize,
}

impl HttpEmbeddingProvider {
    pub fn new(base_url: &str) -> Result<Self, SimilarityError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| SimilarityError::ProviderUnavailable(e.to_string()))?;
        Ok(Self {
            endpoint: format!("{}/embed", base_url.trim_end_matches('/')),
            client,
            dim: AtomicUsize::new(0),
        })
    }

    fn post<V: DeserializeOwned>(&self, texts: &[&str], granularity: &'static str) -> Result<EmbedResponse<V>, SimilarityError> {
        let response = self
            .client
            .post(&self.endpoint)
            .json(&EmbedRequest { texts, granularity })
            .send()
            .map_err(|e| SimilarityError::ProviderUnavailable(e.to_string()))?;
        let status = response.status();
        if status == reqwest::StatusCode::SERVICE_UNAVAILABLE {
            return Err(SimilarityError::ProviderUnavailable("encoder still loading (503)".into()));
        }
        if !status.is_success() {
            return Err(SimilarityError::BadResponse(format!("HTTP {status}")));
        }
        let body: EmbedResponse<V> = response.json().map_err(|e| SimilarityError::BadResponse(e.to_string()))?;
        if body.vectors.len() != texts.len() {
            return Err(SimilarityError::BadResponse(format!(
                "{} vectors for {} texts",
                body.vectors.len(),
                texts.len()
            )));
        }
        self.check_dim(body.dim)?;
        Ok(body)
    }

    fn check_dim(&self, dim: usize) -> Result<(), SimilarityError> {
        match self.dim.compare_exchange(0, dim, Ordering::SeqCst, Ordering::SeqCst) {
            Ok(_) => Ok(()),
            Err(known) if known == dim => Ok(()),
            Err(known) => Err(SimilarityError::BadResponse(format!("dimension changed from {known} to {dim}"))),
        }
    }

    fn check_vector(&self, v: &[f64]) -> Result<(), SimilarityError> {
        let dim = self.dim.load(Ordering::SeqCst);
        if v.len() != dim {
            return Err(SimilarityError::BadResponse(format!("vector of length {} for dim {dim}", v.len())));
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(SimilarityError::BadResponse(format!("vector norm {norm} is not 1")));
        }
        Ok(())
    }

    /// Sentence vectors for many texts, in request order.
    pub fn embed_sentences(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, SimilarityError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(MAX_BATCH) {
            let body: EmbedResponse<Vec<f64>> = self.post(chunk, "sentence")?;
            for v in &body.vectors {
                self.check_vector(v)?;
            }
            out.extend(body.vectors);
        }
        Ok(out)
    }

    /// Per-token vectors for many texts, in request order.
    pub fn embed_tokens(&self, texts: &[&str]) -> Result<Vec<Vec<Vec<f64>>>, SimilarityError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(MAX_BATCH) {
            let body: EmbedResponse<Vec<Vec<f64>>> = self.post(chunk, "token")?;
            for v in body.vectors.iter().flatten() {
                self.check_vector(v)?;
            }
            out.extend(body.vectors);
        }
        Ok(out)
    }

    /// Dimension reported by the service, once known.
    pub fn dim(&self) -> Option<usize> {
        match self.dim.load(Ordering::SeqCst) {
            0 => None,
            d => Some(d),
        }
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn sentence_vector(&self, text: &str) -> Result<Vec<f64>, SimilarityError> {
        Ok(self.embed_sentences(&[text])?.remove(0))
    }

    fn token_vectors(&self, text: &str) -> Result<Vec<Vec<f64>>, SimilarityError> {
        Ok(self.embed_tokens(&[text])?.remove(0))
    }
}
