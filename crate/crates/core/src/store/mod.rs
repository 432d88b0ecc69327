//! On-disk memory stores and run manifests.
//!
//! A store file is JSON lines. The first line is the header; every later
//! line is one record: each fragment of 𝓜 then 𝓡 in id order with its
//! embedding, then one record per consolidated session. The header carries
//! the SHA-256 of everything after it.

mod manifest;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub use manifest::{
    events_from_trace, read_manifest, replay_pool, ManifestEvent, ManifestHeader, ReplayError, RunManifest,
    MANIFEST_FORMAT, MANIFEST_VERSION,
};

use crate::memory::{MemoryError, MemoryStore, PoolTraceEntry};
use crate::model::MemoryFragment;
use crate::vector::Embedding;

pub const STORE_FORMAT: &str = "premem-store";
pub const STORE_VERSION: u64 = 1;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported store version {found} (this build reads version {STORE_VERSION})")]
    UnsupportedVersion { found: String },
    #[error("not a store file: {0}")]
    WrongFormat(String),
    #[error("store corrupted: {0}")]
    Corrupt(String),
    #[error("store must be sealed before saving")]
    NotSealed,
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreHeader {
    pub format: String,
    pub version: u64,
    pub conversation_id: String,
    pub embedding_backend: String,
    pub dimension: usize,
    pub config_hash: String,
    pub memory_count: usize,
    pub reasoning_count: usize,
    pub session_count: usize,
    pub body_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Record {
    Fragment {
        fragment: MemoryFragment,
        embedding: Embedding,
    },
    Session(PoolTraceEntry),
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Canonical serialization of a sealed store.
pub fn store_to_string(store: &MemoryStore) -> Result<String, StoreError> {
    if !store.is_sealed() {
        return Err(StoreError::NotSealed);
    }
    let mut body = String::new();
    for fragment in store.iter_all() {
        let embedding = store
            .embedding(&fragment.fragment_id)
            .expect("sealed stores embed every fragment")
            .clone();
        let record = Record::Fragment {
            fragment: fragment.clone(),
            embedding,
        };
        body.push_str(&serde_json::to_string(&record).expect("serializable"));
        body.push('\n');
    }
    for entry in store.trace() {
        body.push_str(&serde_json::to_string(&Record::Session(entry.clone())).expect("serializable"));
        body.push('\n');
    }
    let header = StoreHeader {
        format: STORE_FORMAT.into(),
        version: STORE_VERSION,
        conversation_id: store.conversation_id().into(),
        embedding_backend: store.embedding_backend().into(),
        dimension: store.dimension(),
        config_hash: store.config_hash().into(),
        memory_count: store.memory().len(),
        reasoning_count: store.reasoning().len(),
        session_count: store.trace().len(),
        body_sha256: sha256_hex(body.as_bytes()),
    };
    Ok(format!(
        "{}\n{body}",
        serde_json::to_string(&header).expect("serializable")
    ))
}

/// Parses a store; the result is unsealed.
pub fn store_from_str(text: &str) -> Result<MemoryStore, StoreError> {
    let (header_line, body) = text.split_once('\n').unwrap_or((text, ""));
    let raw: Value =
        serde_json::from_str(header_line).map_err(|e| StoreError::WrongFormat(format!("header is not JSON: {e}")))?;
    if raw.get("format").and_then(Value::as_str) != Some(STORE_FORMAT) {
        return Err(StoreError::WrongFormat(format!("format field is {}", raw["format"])));
    }
    match raw.get("version") {
        Some(Value::Number(n)) if n.as_u64() == Some(STORE_VERSION) => {}
        Some(Value::String(s)) if s == &STORE_VERSION.to_string() => {}
        Some(other) => {
            return Err(StoreError::UnsupportedVersion {
                found: other.as_str().map_or_else(|| other.to_string(), str::to_string),
            })
        }
        None => {
            return Err(StoreError::UnsupportedVersion {
                found: "missing".into(),
            })
        }
    }
    let mut raw = raw;
    raw["version"] = Value::from(STORE_VERSION);
    let header: StoreHeader = serde_json::from_value(raw).map_err(|e| StoreError::Corrupt(format!("header: {e}")))?;
    if sha256_hex(body.as_bytes()) != header.body_sha256 {
        return Err(StoreError::Corrupt("body checksum mismatch".into()));
    }

    let mut store = MemoryStore::new(
        header.conversation_id.clone(),
        header.embedding_backend.clone(),
        header.dimension,
        header.config_hash.clone(),
    );
    let mut trace = Vec::new();
    for (n, line) in body.lines().enumerate() {
        let record: Record =
            serde_json::from_str(line).map_err(|e| StoreError::Corrupt(format!("line {}: {e}", n + 2)))?;
        match record {
            Record::Fragment { fragment, embedding } => store.insert(fragment, Some(embedding))?,
            Record::Session(entry) => trace.push(entry),
        }
    }
    if store.memory().len() != header.memory_count
        || store.reasoning().len() != header.reasoning_count
        || trace.len() != header.session_count
    {
        return Err(StoreError::Corrupt("record counts disagree with header".into()));
    }
    store.set_trace(trace);
    Ok(store)
}

pub fn save_store(store: &MemoryStore, path: &Path) -> Result<(), StoreError> {
    let text = store_to_string(store)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| StoreError::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| StoreError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads and seals a store. Every fragment already has an embedding, so
/// no backend is needed.
pub fn load_store(path: &Path) -> Result<MemoryStore, StoreError> {
    let text = fs::read_to_string(path).map_err(|source| StoreError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut store = store_from_str(&text)?;
    store.seal(None)?;
    Ok(store)
}
