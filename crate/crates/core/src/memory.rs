//! The queryable union 𝓜 ∪ 𝓡 with its embeddings and indexes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::consolidation::{ClusterSummary, ConnectedPair, Consolidated};
use crate::model::MemoryFragment;
use crate::vector::{
    embed_fragment, Bm25Index, Bm25Params, DenseIndex, Embedding, EmbeddingBackend, EmbeddingError, VectorError,
};

#[derive(Debug, thiserror::Error)]
pub enum MemoryError {
    #[error("fragment {0} already stored")]
    Duplicate(String),
    #[error("fragment {0} has no embedding and no backend was given")]
    MissingEmbedding(String),
    #[error("store is sealed")]
    Sealed,
    #[error("store is not sealed")]
    NotSealed,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Vector(#[from] VectorError),
}

/// Condensed per-session consolidation record kept with the store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolTraceEntry {
    pub session_index: u32,
    pub chosen_k: usize,
    pub mean_silhouette: Option<f64>,
    pub clusters: Vec<ClusterSummary>,
    pub pairs: Vec<ConnectedPair>,
    pub pool_after: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct MemoryStore {
    conversation_id: String,
    embedding_backend: String,
    dimension: usize,
    config_hash: String,
    memory: BTreeMap<String, MemoryFragment>,
    reasoning: BTreeMap<String, MemoryFragment>,
    embeddings: BTreeMap<String, Embedding>,
    trace: Vec<PoolTraceEntry>,
    bm25_params: Bm25Params,
    indexes: Option<(DenseIndex, Bm25Index)>,
}

impl PartialEq for MemoryStore {
    fn eq(&self, other: &Self) -> bool {
        self.conversation_id == other.conversation_id
            && self.embedding_backend == other.embedding_backend
            && self.dimension == other.dimension
            && self.config_hash == other.config_hash
            && self.memory == other.memory
            && self.reasoning == other.reasoning
            && self.embeddings == other.embeddings
            && self.trace == other.trace
    }
}

impl MemoryStore {
    pub fn new(
        conversation_id: impl Into<String>,
        embedding_backend: impl Into<String>,
        dimension: usize,
        config_hash: impl Into<String>,
    ) -> Self {
        Self {
            conversation_id: conversation_id.into(),
            embedding_backend: embedding_backend.into(),
            dimension,
            config_hash: config_hash.into(),
            memory: BTreeMap::new(),
            reasoning: BTreeMap::new(),
            embeddings: BTreeMap::new(),
            trace: Vec::new(),
            bm25_params: Bm25Params::default(),
            indexes: None,
        }
    }

    /// Takes over a consolidation result, extracted-fragment vectors
    /// included. Reasoning fragments get their vectors at sealing.
    pub fn from_consolidated(
        conversation_id: impl Into<String>,
        backend: &dyn EmbeddingBackend,
        config_hash: impl Into<String>,
        consolidated: Consolidated,
    ) -> Self {
        let mut store = Self::new(conversation_id, backend.backend_id(), backend.dimension(), config_hash);
        store.memory = consolidated.memory;
        store.reasoning = consolidated.reasoning;
        store.embeddings = consolidated.memory_vectors;
        store.trace = consolidated
            .trace
            .into_iter()
            .map(|t| PoolTraceEntry {
                session_index: t.session_index,
                chosen_k: t.clustering.chosen_k,
                mean_silhouette: t.clustering.mean_silhouette,
                clusters: t.clusters,
                pairs: t.pairs,
                pool_after: t.pool_after,
            })
            .collect();
        store
    }

    /// Adds one fragment; reasoning fragments land in 𝓡, the rest in 𝓜.
    pub fn insert(&mut self, fragment: MemoryFragment, embedding: Option<Embedding>) -> Result<(), MemoryError> {
        if self.indexes.is_some() {
            return Err(MemoryError::Sealed);
        }
        let id = fragment.fragment_id.clone();
        if self.memory.contains_key(&id) || self.reasoning.contains_key(&id) {
            return Err(MemoryError::Duplicate(id));
        }
        if let Some(e) = embedding {
            if e.dimension() != self.dimension {
                return Err(VectorError::DimensionMismatch {
                    left: self.dimension,
                    right: e.dimension(),
                }
                .into());
            }
            self.embeddings.insert(id.clone(), e);
        }
        if fragment.is_reasoned() {
            self.reasoning.insert(id, fragment);
        } else {
            self.memory.insert(id, fragment);
        }
        Ok(())
    }

    pub fn set_trace(&mut self, trace: Vec<PoolTraceEntry>) {
        self.trace = trace;
    }

    pub fn set_bm25_params(&mut self, params: Bm25Params) {
        self.bm25_params = params;
        if self.indexes.is_none() {
            return;
        }
        let rebuilt = Bm25Index::build(
            self.iter_all().map(|f| (f.fragment_id.clone(), f.embedding_text())),
            params,
        );
        if let Some(indexes) = &mut self.indexes {
            indexes.1 = rebuilt;
        }
    }

    /// Fills in missing embeddings with `backend`, then builds the dense and
    /// BM25 indexes. Idempotent.
    pub fn seal(&mut self, backend: Option<&dyn EmbeddingBackend>) -> Result<(), MemoryError> {
        if self.indexes.is_some() {
            return Ok(());
        }
        let missing: Vec<MemoryFragment> = self
            .iter_all()
            .filter(|f| !self.embeddings.contains_key(&f.fragment_id))
            .cloned()
            .collect();
        for fragment in missing {
            let backend = backend.ok_or_else(|| MemoryError::MissingEmbedding(fragment.fragment_id.clone()))?;
            let vector = embed_fragment(&fragment, backend)?;
            if vector.dimension() != self.dimension {
                return Err(VectorError::DimensionMismatch {
                    left: self.dimension,
                    right: vector.dimension(),
                }
                .into());
            }
            self.embeddings.insert(fragment.fragment_id, vector);
        }
        let mut dense = DenseIndex::new();
        for fragment in self.iter_all() {
            dense.insert(
                fragment.fragment_id.clone(),
                self.embeddings[&fragment.fragment_id].clone(),
            )?;
        }
        dense.seal();
        let bm25 = Bm25Index::build(
            self.iter_all().map(|f| (f.fragment_id.clone(), f.embedding_text())),
            self.bm25_params,
        );
        self.indexes = Some((dense, bm25));
        Ok(())
    }

    pub fn is_sealed(&self) -> bool {
        self.indexes.is_some()
    }

    pub fn dense(&self) -> Result<&DenseIndex, MemoryError> {
        self.indexes.as_ref().map(|i| &i.0).ok_or(MemoryError::NotSealed)
    }

    pub fn bm25(&self) -> Result<&Bm25Index, MemoryError> {
        self.indexes.as_ref().map(|i| &i.1).ok_or(MemoryError::NotSealed)
    }

    pub fn conversation_id(&self) -> &str {
        &self.conversation_id
    }

    pub fn embedding_backend(&self) -> &str {
        &self.embedding_backend
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    /// 𝓜, by id.
    pub fn memory(&self) -> &BTreeMap<String, MemoryFragment> {
        &self.memory
    }

    /// 𝓡, by id.
    pub fn reasoning(&self) -> &BTreeMap<String, MemoryFragment> {
        &self.reasoning
    }

    pub fn embedding(&self, fragment_id: &str) -> Option<&Embedding> {
        self.embeddings.get(fragment_id)
    }

    pub fn trace(&self) -> &[PoolTraceEntry] {
        &self.trace
    }

    pub fn get(&self, fragment_id: &str) -> Option<&MemoryFragment> {
        self.memory.get(fragment_id).or_else(|| self.reasoning.get(fragment_id))
    }

    /// 𝓜 then 𝓡, each in id order.
    pub fn iter_all(&self) -> impl Iterator<Item = &MemoryFragment> {
        self.memory.values().chain(self.reasoning.values())
    }

    pub fn len(&self) -> usize {
        self.memory.len() + self.reasoning.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
