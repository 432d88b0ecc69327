use std::collections::HashSet;

use super::{cosine, rank_order, Embedding, VectorError};

/// Exhaustive cosine index. Insert, seal, then query.
#[derive(Debug, Clone, Default)]
pub struct DenseIndex {
    entries: Vec<(String, Embedding)>,
    ids: HashSet<String>,
    dimension: Option<usize>,
    sealed: bool,
}

impl DenseIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Embedding) -> Result<(), VectorError> {
        if self.sealed {
            return Err(VectorError::Sealed);
        }
        let id = id.into();
        match self.dimension {
            Some(d) if d != vector.dimension() => {
                return Err(VectorError::DimensionMismatch {
                    left: d,
                    right: vector.dimension(),
                })
            }
            _ => self.dimension = Some(vector.dimension()),
        }
        if !self.ids.insert(id.clone()) {
            return Err(VectorError::DuplicateId(id));
        }
        self.entries.push((id, vector));
        Ok(())
    }

    pub fn seal(&mut self) {
        self.sealed = true;
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dimension(&self) -> Option<usize> {
        self.dimension
    }

    /// The `min(k, len)` best entries by cosine, ties by ascending id.
    pub fn topk(&self, query: &Embedding, k: usize) -> Result<Vec<(String, f64)>, VectorError> {
        if !self.sealed {
            return Err(VectorError::NotSealed);
        }
        let mut scored = self
            .entries
            .iter()
            .map(|(id, v)| cosine(query, v).map(|s| (id.clone(), s)))
            .collect::<Result<Vec<_>, _>>()?;
        scored.sort_by(rank_order);
        scored.truncate(k);
        Ok(scored)
    }
}
