//! Embedding backends and the content-hash cache.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{Embedding, VectorError};
use crate::eval::metrics::tokenize;
use crate::model::MemoryFragment;

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("embedding backend unavailable: {0}")]
    Unavailable(String),
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error("embedding cache i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("embedding cache {path}: {reason}")]
    CacheCorrupt { path: String, reason: String },
}

pub trait EmbeddingBackend: Send + Sync {
    /// Stable identifier, recorded in store headers and cache keys.
    fn backend_id(&self) -> String;
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Embedding, EmbeddingError>;
}

impl<B: EmbeddingBackend + ?Sized> EmbeddingBackend for Box<B> {
    fn backend_id(&self) -> String {
        (**self).backend_id()
    }
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn embed(&self, text: &str) -> Result<Embedding, EmbeddingError> {
        (**self).embed(text)
    }
}

impl<B: EmbeddingBackend + ?Sized> EmbeddingBackend for std::sync::Arc<B> {
    fn backend_id(&self) -> String {
        (**self).backend_id()
    }
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn embed(&self, text: &str) -> Result<Embedding, EmbeddingError> {
        (**self).embed(text)
    }
}

/// Embeds a fragment as `key: content`.
pub fn embed_fragment(fragment: &MemoryFragment, backend: &dyn EmbeddingBackend) -> Result<Embedding, EmbeddingError> {
    backend.embed(&fragment.embedding_text())
}

fn sha256(parts: &[&[u8]]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for (i, part) in parts.iter().enumerate() {
        if i > 0 {
            hasher.update([0u8]);
        }
        hasher.update(part);
    }
    hasher.finalize().into()
}

/// Pseudo-random unit vector seeded by the text.
///
/// The seed is the first eight bytes (little endian) of SHA-256 of the UTF-8
/// text. A ChaCha8 generator seeded with it draws `dimension` standard
/// normals, and the result is scaled to unit length. Equal texts give equal
/// vectors; different texts are near-orthogonal in high dimension.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dimension: usize,
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        Self { dimension }
    }

    fn raw(&self, text: &str) -> Vec<f64> {
        let digest = sha256(&[text.as_bytes()]);
        let seed = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..self.dimension).map(|_| StandardNormal.sample(&mut rng)).collect()
    }
}

impl EmbeddingBackend for HashEmbedder {
    fn backend_id(&self) -> String {
        format!("hash-{}", self.dimension)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbeddingError> {
        Ok(Embedding::new(self.raw(text))?.normalized())
    }
}

const TOKEN_STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "to", "of", "in", "on", "at", "for", "with", "is", "am", "are", "was", "were", "be",
    "been", "i", "my", "me", "it", "this", "that", "s", "t", "m", "ve",
];

/// Bag-of-words feature hashing: the normalized sum of [`HashEmbedder`]
/// vectors of the text's lowercase tokens, minus a few stopwords. Texts that
/// share words get positive similarity, which makes it a usable offline
/// stand-in for a semantic model.
#[derive(Debug, Clone)]
pub struct TokenHashEmbedder {
    tokens: HashEmbedder,
}

impl TokenHashEmbedder {
    pub fn new(dimension: usize) -> Self {
        Self {
            tokens: HashEmbedder::new(dimension),
        }
    }
}

impl EmbeddingBackend for TokenHashEmbedder {
    fn backend_id(&self) -> String {
        format!("token-hash-{}", self.tokens.dimension)
    }

    fn dimension(&self) -> usize {
        self.tokens.dimension
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbeddingError> {
        let mut sum = vec![0.0; self.tokens.dimension];
        for token in tokenize(text) {
            if TOKEN_STOPWORDS.contains(&token.as_str()) {
                continue;
            }
            let v = Embedding::new(self.tokens.raw(&token))?.normalized();
            sum.iter_mut().zip(v.values()).for_each(|(s, x)| *s += x);
        }
        Ok(Embedding::new(sum)?.normalized())
    }
}

/// OpenAI-compatible `/embeddings` client.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    base_url: String,
    model: String,
    dimension: usize,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpEmbedder {
    pub fn new(base_url: &str, model: &str, dimension: usize, api_key_env: Option<&str>) -> Self {
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            dimension,
            token: api_key_env.and_then(|v| std::env::var(v).ok()),
            agent: ureq::Agent::config_builder()
                .timeout_global(Some(Duration::from_secs(120)))
                .build()
                .into(),
        }
    }
}

impl EmbeddingBackend for HttpEmbedder {
    fn backend_id(&self) -> String {
        format!("http:{}", self.model)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbeddingError> {
        let mut call = self.agent.post(&format!("{}/embeddings", self.base_url));
        if let Some(token) = &self.token {
            call = call.header("Authorization", &format!("Bearer {token}"));
        }
        let reply: Value = call
            .send_json(json!({"model": self.model, "input": text}))
            .map_err(|e| EmbeddingError::Unavailable(e.to_string()))?
            .into_body()
            .read_json()
            .map_err(|e| EmbeddingError::Unavailable(e.to_string()))?;
        let values: Vec<f64> = reply["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| EmbeddingError::Unavailable(format!("unexpected reply shape: {reply}")))?
            .iter()
            .map(|v| v.as_f64().unwrap_or(f64::NAN))
            .collect();
        if values.len() != self.dimension {
            return Err(VectorError::DimensionMismatch {
                left: self.dimension,
                right: values.len(),
            }
            .into());
        }
        Ok(Embedding::new(values)?)
    }
}

pub const CACHE_BIN: &str = "embeddings.bin";
pub const CACHE_INDEX: &str = "embeddings.idx";
const CACHE_MAGIC: &[u8; 4] = b"PMEC";
const CACHE_VERSION: u32 = 1;

/// Memoizes another backend by content hash, optionally persisted to disk.
///
/// On disk the cache is `embeddings.bin`, a little-endian binary file
/// (`PMEC`, version `u32`, dimension `u32`, count `u64`, then per entry a
/// 32-byte key and `dimension` `f64`s, sorted by key), plus
/// `embeddings.idx`, a text listing of the keys for inspection.
pub struct CachedEmbedder<B> {
    inner: B,
    entries: Mutex<HashMap<[u8; 32], Embedding>>,
    hits: Mutex<(u64, u64)>,
    dir: Option<PathBuf>,
}

impl<B: EmbeddingBackend> CachedEmbedder<B> {
    pub fn in_memory(inner: B) -> Self {
        Self {
            inner,
            entries: Mutex::new(HashMap::new()),
            hits: Mutex::new((0, 0)),
            dir: None,
        }
    }

    /// Loads `dir/embeddings.bin` if present.
    pub fn persistent(inner: B, dir: impl Into<PathBuf>) -> Result<Self, EmbeddingError> {
        let dir = dir.into();
        let entries = match load_cache(&dir.join(CACHE_BIN), inner.dimension()) {
            Ok(entries) => entries,
            Err(EmbeddingError::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => HashMap::new(),
            Err(e) => return Err(e),
        };
        Ok(Self {
            inner,
            entries: Mutex::new(entries),
            hits: Mutex::new((0, 0)),
            dir: Some(dir),
        })
    }

    fn key(&self, text: &str) -> [u8; 32] {
        sha256(&[self.inner.backend_id().as_bytes(), text.as_bytes()])
    }

    /// `(hits, misses)` since construction.
    pub fn stats(&self) -> (u64, u64) {
        *self.hits.lock().expect("stats poisoned")
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes the cache to its directory. No-op for in-memory caches.
    pub fn save(&self) -> Result<(), EmbeddingError> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        fs::create_dir_all(dir)?;
        let entries = self.entries.lock().expect("cache poisoned");
        let mut keys: Vec<&[u8; 32]> = entries.keys().collect();
        keys.sort();

        let dimension = self.inner.dimension();
        let mut bin = Vec::with_capacity(20 + keys.len() * (32 + 8 * dimension));
        bin.extend_from_slice(CACHE_MAGIC);
        bin.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        bin.extend_from_slice(&(dimension as u32).to_le_bytes());
        bin.extend_from_slice(&(keys.len() as u64).to_le_bytes());
        let mut index = format!(
            "premem-embedding-cache\tv{CACHE_VERSION}\t{}\t{dimension}\n",
            self.inner.backend_id()
        );
        for (row, key) in keys.iter().enumerate() {
            bin.extend_from_slice(&key[..]);
            for v in entries[*key].values() {
                bin.extend_from_slice(&v.to_le_bytes());
            }
            index.push_str(&format!("{}\t{row}\n", hex::encode(key)));
        }
        fs::File::create(dir.join(CACHE_BIN))?.write_all(&bin)?;
        fs::write(dir.join(CACHE_INDEX), index)?;
        Ok(())
    }
}

fn load_cache(path: &Path, dimension: usize) -> Result<HashMap<[u8; 32], Embedding>, EmbeddingError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let corrupt = |reason: &str| EmbeddingError::CacheCorrupt {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    if bytes.len() < 20 || &bytes[..4] != CACHE_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CACHE_VERSION {
        return Err(corrupt(&format!("unsupported version {version}")));
    }
    let stored_dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if stored_dim != dimension {
        return Err(corrupt(&format!("dimension {stored_dim}, backend has {dimension}")));
    }
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let row = 32 + 8 * dimension;
    if bytes.len() != 20 + count * row {
        return Err(corrupt("truncated"));
    }
    let mut entries = HashMap::with_capacity(count);
    for chunk in bytes[20..].chunks_exact(row) {
        let key: [u8; 32] = chunk[..32].try_into().unwrap();
        let values = chunk[32..]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        entries.insert(key, Embedding::new(values).map_err(|_| corrupt("non-finite value"))?);
    }
    Ok(entries)
}

impl<B: EmbeddingBackend> EmbeddingBackend for CachedEmbedder<B> {
    fn backend_id(&self) -> String {
        self.inner.backend_id()
    }

    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbeddingError> {
        let key = self.key(text);
        if let Some(hit) = self.entries.lock().expect("cache poisoned").get(&key) {
            self.hits.lock().expect("stats poisoned").0 += 1;
            return Ok(hit.clone());
        }
        let vector = self.inner.embed(text)?;
        self.hits.lock().expect("stats poisoned").1 += 1;
        self.entries.lock().expect("cache poisoned").insert(key, vector.clone());
        Ok(vector)
    }
}
