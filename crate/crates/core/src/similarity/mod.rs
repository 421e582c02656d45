//! Similarity measures in `[0, 1]`.
//!
//! Short texts are compared by sentence-embedding cosine (or a lexical
//! term-frequency cosine when no encoder is configured), long texts by
//! greedy token matching F1, boxes by IoU and closed-form answers by
//! normalized exact match.

mod remote;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::data::BoundingBox;

pub use remote::HttpEmbeddingProvider;

/// Texts with more tokens than this use the long-text measure.
pub const LONG_TEXT_TOKENS: usize = 25;

/// Tolerance on the L2 norm of provider vectors.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("embedding provider returned a bad response: {0}")]
    BadResponse(String),
    #[error("text has no tokens")]
    EmptyText,
}

/// A similarity value, always within `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Similarity(f64);

impl Similarity {
    pub const ZERO: Similarity = Similarity(0.0);
    pub const ONE: Similarity = Similarity(1.0);

    /// Clamp into `[0, 1]`; NaN maps to 0.
    pub fn new(value: f64) -> Self {
        if value.is_nan() {
            Similarity(0.0)
        } else {
            Similarity(value.clamp(0.0, 1.0))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for Similarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Sentence and token encoder.
///
/// Vectors must be unit-norm and deterministic for a given provider
/// instance. Providers that cannot serve concurrent callers return `false`
/// from [`EmbeddingProvider::concurrent`] and the pipeline serializes calls.
pub trait EmbeddingProvider: Send + Sync {
    fn sentence_vector(&self, text: &str) -> Result<Vec<f64>, SimilarityError>;

    fn token_vectors(&self, text: &str) -> Result<Vec<Vec<f64>>, SimilarityError>;

    fn concurrent(&self) -> bool {
        true
    }
}

/// Lowercase, split on whitespace and punctuation, drop empty pieces.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine of L2-normalized term-frequency vectors.
pub fn lexical_similarity(a: &str, b: &str) -> Similarity {
    let (ta, tb) = (tokenize(a), tokenize(b));
    match (ta.is_empty(), tb.is_empty()) {
        (true, true) => return Similarity::ONE,
        (true, false) | (false, true) => return Similarity::ZERO,
        _ => {}
    }
    // ordered maps keep the float summation order fixed
    fn counts(tokens: &[String]) -> BTreeMap<&str, f64> {
        let mut m = BTreeMap::new();
        for t in tokens {
            *m.entry(t.as_str()).or_default() += 1.0;
        }
        m
    }
    let (ca, cb) = (counts(&ta), counts(&tb));
    if ca == cb {
        // exact identity; the cosine below can land an ulp short of 1
        return Similarity::ONE;
    }
    let norm = |m: &BTreeMap<&str, f64>| m.values().map(|v| v * v).sum::<f64>().sqrt();
    let shared: f64 = ca.iter().filter_map(|(k, v)| cb.get(k).map(|w| v * w)).sum();
    Similarity::new(shared / (norm(&ca) * norm(&cb)))
}

/// Cosine of sentence vectors with negative values clamped to zero.
pub fn embedding_similarity(a: &str, b: &str, provider: &dyn EmbeddingProvider) -> Result<Similarity, SimilarityError> {
    let va = provider.sentence_vector(a)?;
    let vb = provider.sentence_vector(b)?;
    Ok(Similarity::new(dot(&va, &vb)))
}

/// Greedy-matching F1 over a candidate × reference similarity matrix.
///
/// Recall averages, over reference tokens, the best match among candidate
/// tokens; precision does the converse. Entries are clamped to `[0, 1]`.
pub fn greedy_f1(matrix: &[Vec<f64>]) -> Similarity {
    let rows = matrix.len();
    let cols = matrix.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Similarity::ZERO;
    }
    let clamp = |v: f64| Similarity::new(v).value();
    let precision = matrix.iter().map(|row| row.iter().copied().map(clamp).fold(0.0, f64::max)).sum::<f64>() / rows as f64;
    let recall = (0..cols)
        .map(|j| matrix.iter().map(|row| clamp(row[j])).fold(0.0, f64::max))
        .sum::<f64>()
        / cols as f64;
    if precision + recall > 0.0 {
        Similarity::new(2.0 * precision * recall / (precision + recall))
    } else {
        Similarity::ZERO
    }
}

/// Greedy token matching F1 using provider token vectors.
pub fn greedy_match_f1(cand: &str, reference: &str, provider: &dyn EmbeddingProvider) -> Result<Similarity, SimilarityError> {
    let c = provider.token_vectors(cand)?;
    let r = provider.token_vectors(reference)?;
    if c.is_empty() || r.is_empty() {
        return Err(SimilarityError::EmptyText);
    }
    let matrix: Vec<Vec<f64>> = c.iter().map(|u| r.iter().map(|v| dot(u, v)).collect()).collect();
    Ok(greedy_f1(&matrix))
}

/// Greedy matching F1 where tokens match only when identical.
pub fn token_match_f1(cand: &str, reference: &str) -> Result<Similarity, SimilarityError> {
    let (c, r) = (tokenize(cand), tokenize(reference));
    if c.is_empty() || r.is_empty() {
        return Err(SimilarityError::EmptyText);
    }
    let matrix: Vec<Vec<f64>> = c.iter().map(|u| r.iter().map(|v| f64::from(u == v)).collect()).collect();
    Ok(greedy_f1(&matrix))
}

/// Intersection over union. Two zero-area boxes score 1 when equal, else 0.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> Similarity {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return if a == b { Similarity::ONE } else { Similarity::ZERO };
    }
    Similarity::new(inter / union)
}

/// Trim, lowercase, collapse whitespace and drop trailing periods.
pub fn normalize_answer(text: &str) -> String {
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    collapsed.trim_end_matches('.').trim_end().to_string()
}

pub fn exact_match(a: &str, b: &str) -> Similarity {
    if normalize_answer(a) == normalize_answer(b) {
        Similarity::ONE
    } else {
        Similarity::ZERO
    }
}

/// Text measures used by consistency scoring.
#[derive(Clone)]
pub enum TextBackend {
    /// Term-frequency cosine for short texts, exact-token matching F1 for
    /// long ones. Needs no encoder.
    Lexical,
    /// Sentence-embedding cosine for short texts, embedding greedy-matching
    /// F1 for long ones.
    Embedding(Arc<dyn EmbeddingProvider>),
}

impl fmt::Debug for TextBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TextBackend::Lexical => f.write_str("Lexical"),
            TextBackend::Embedding(_) => f.write_str("Embedding(..)"),
        }
    }
}

fn empty_rule(a: &str, b: &str) -> Option<Similarity> {
    match (tokenize(a).is_empty(), tokenize(b).is_empty()) {
        (true, true) => Some(Similarity::ONE),
        (true, false) | (false, true) => Some(Similarity::ZERO),
        _ => None,
    }
}

impl TextBackend {
    pub fn concurrent(&self) -> bool {
        match self {
            TextBackend::Lexical => true,
            TextBackend::Embedding(p) => p.concurrent(),
        }
    }

    /// Single-sentence comparison.
    pub fn short(&self, a: &str, b: &str) -> Result<Similarity, SimilarityError> {
        if let Some(s) = empty_rule(a, b) {
            return Ok(s);
        }
        match self {
            TextBackend::Lexical => Ok(lexical_similarity(a, b)),
            TextBackend::Embedding(p) => embedding_similarity(a, b, p.as_ref()),
        }
    }

    /// Comparison for slots that may hold paragraphs. Falls back to
    /// [`TextBackend::short`] unless either text exceeds
    /// [`LONG_TEXT_TOKENS`] tokens.
    pub fn long(&self, a: &str, b: &str) -> Result<Similarity, SimilarityError> {
        if let Some(s) = empty_rule(a, b) {
            return Ok(s);
        }
        if tokenize(a).len().max(tokenize(b).len()) <= LONG_TEXT_TOKENS {
            return self.short(a, b);
        }
        match self {
            TextBackend::Lexical => token_match_f1(a, b),
            TextBackend::Embedding(p) => greedy_match_f1(a, b, p.as_ref()),
        }
    }
}
