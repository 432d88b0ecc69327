//! Embeddings, exact dense search and BM25.

mod bm25;
mod dense;
mod embed;

use serde::{Deserialize, Serialize};

pub use bm25::{Bm25Index, Bm25Params};
pub use dense::DenseIndex;
pub use embed::{
    embed_fragment, CachedEmbedder, EmbeddingBackend, EmbeddingError, HashEmbedder, HttpEmbedder, TokenHashEmbedder,
    CACHE_BIN, CACHE_INDEX,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VectorError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("non-finite component in vector")]
    NonFinite,
    #[error("duplicate id {0} in index")]
    DuplicateId(String),
    #[error("index is sealed")]
    Sealed,
    #[error("index is not sealed")]
    NotSealed,
}

/// A dense embedding. Components are finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, VectorError> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(Self(values))
        } else {
            Err(VectorError::NonFinite)
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Embedding) -> Result<f64, VectorError> {
        check_dims(self, other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    /// Scaled to unit length; the zero vector is returned unchanged.
    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            self.0.iter_mut().for_each(|v| *v /= n);
        }
        self
    }

    /// Arithmetic mean of equal-dimension vectors.
    pub fn mean<'a>(vectors: impl IntoIterator<Item = &'a Embedding>) -> Result<Embedding, VectorError> {
        let mut iter = vectors.into_iter();
        let first = match iter.next() {
            Some(v) => v,
            None => return Ok(Embedding(Vec::new())),
        };
        let mut sum = first.0.clone();
        let mut count = 1usize;
        for v in iter {
            check_dims(first, v)?;
            sum.iter_mut().zip(&v.0).for_each(|(s, x)| *s += x);
            count += 1;
        }
        sum.iter_mut().for_each(|s| *s /= count as f64);
        Ok(Embedding(sum))
    }
}

fn check_dims(a: &Embedding, b: &Embedding) -> Result<(), VectorError> {
    if a.dimension() == b.dimension() {
        Ok(())
    } else {
        Err(VectorError::DimensionMismatch {
            left: a.dimension(),
            right: b.dimension(),
        })
    }
}

/// Cosine similarity. A zero vector on either side yields 0.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64, VectorError> {
    let dot = a.dot(b)?;
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        log::warn!("cosine with a zero vector; treating similarity as 0");
        return Ok(0.0);
    }
    Ok((dot / denom).clamp(-1.0, 1.0))
}

/// Orders `(id, score)` by descending score, then ascending id.
pub(crate) fn rank_order(a: &(String, f64), b: &(String, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}
