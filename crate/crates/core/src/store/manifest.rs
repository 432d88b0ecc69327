//! Append-only run manifests: a header line, then one JSON event per line
//! in the order things happened.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::StoreError;
use crate::consolidation::{ClusterSummary, SessionTrace};

pub const MANIFEST_FORMAT: &str = "premem-manifest";
pub const MANIFEST_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub format: String,
    pub version: u64,
    /// The effective run configuration.
    pub config: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ManifestEvent {
    SessionExtracted {
        conversation_id: String,
        session_index: u32,
        fragment_ids: Vec<String>,
        warnings: Vec<String>,
    },
    SessionClustered {
        conversation_id: String,
        session_index: u32,
        chosen_k: usize,
        mean_silhouette: Option<f64>,
        singleton_fallback: bool,
        clusters: Vec<ClusterSummary>,
    },
    PairConnected {
        conversation_id: String,
        session_index: u32,
        pool_cluster_id: String,
        new_cluster_id: String,
        similarity: f64,
    },
    PairReasoned {
        conversation_id: String,
        session_index: u32,
        pool_cluster_id: String,
        new_cluster_id: String,
        fragment_ids: Vec<String>,
        skipped: bool,
        warnings: Vec<String>,
    },
    PoolUpdated {
        conversation_id: String,
        session_index: u32,
        removed: Vec<String>,
        added: Vec<String>,
        pool_after: Vec<String>,
    },
    SessionConsolidated {
        conversation_id: String,
        session_index: u32,
        memory_total: usize,
        reasoning_total: usize,
        pool_size: usize,
    },
}

/// Consolidation events for one conversation, in occurrence order.
pub fn events_from_trace(conversation_id: &str, trace: &[SessionTrace]) -> Vec<ManifestEvent> {
    let mut events = Vec::new();
    let mut memory_total = 0;
    let mut reasoning_total = 0;
    for session in trace {
        let id = || conversation_id.to_string();
        let i = session.session_index;
        events.push(ManifestEvent::SessionClustered {
            conversation_id: id(),
            session_index: i,
            chosen_k: session.clustering.chosen_k,
            mean_silhouette: session.clustering.mean_silhouette,
            singleton_fallback: session.clustering.singleton_fallback,
            clusters: session.clusters.clone(),
        });
        for pair in &session.pairs {
            events.push(ManifestEvent::PairConnected {
                conversation_id: id(),
                session_index: i,
                pool_cluster_id: pair.pool_cluster_id.clone(),
                new_cluster_id: pair.new_cluster_id.clone(),
                similarity: pair.similarity,
            });
        }
        for reasoned in &session.reasoned {
            reasoning_total += reasoned.fragment_ids.len();
            events.push(ManifestEvent::PairReasoned {
                conversation_id: id(),
                session_index: i,
                pool_cluster_id: reasoned.pool_cluster_id.clone(),
                new_cluster_id: reasoned.new_cluster_id.clone(),
                fragment_ids: reasoned.fragment_ids.clone(),
                skipped: reasoned.skipped,
                warnings: reasoned.warnings.clone(),
            });
        }
        let after: BTreeSet<&String> = session.pool_after.iter().collect();
        let before: BTreeSet<&String> = session.pool_before.iter().collect();
        events.push(ManifestEvent::PoolUpdated {
            conversation_id: id(),
            session_index: i,
            removed: session
                .pool_before
                .iter()
                .filter(|c| !after.contains(c))
                .cloned()
                .collect(),
            added: session
                .pool_after
                .iter()
                .filter(|c| !before.contains(c))
                .cloned()
                .collect(),
            pool_after: session.pool_after.clone(),
        });
        memory_total += session.clustering.n;
        events.push(ManifestEvent::SessionConsolidated {
            conversation_id: id(),
            session_index: i,
            memory_total,
            reasoning_total,
            pool_size: session.pool_after.len(),
        });
    }
    events
}

pub struct RunManifest {
    path: PathBuf,
    writer: BufWriter<File>,
}

impl RunManifest {
    /// Creates (truncating) a manifest and writes its header.
    pub fn create(path: &Path, config: Value) -> Result<Self, StoreError> {
        let io = |source| StoreError::Io {
            path: path.display().to_string(),
            source,
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io)?;
        }
        let mut writer = BufWriter::new(File::create(path).map_err(io)?);
        let header = ManifestHeader {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            config,
        };
        writeln!(writer, "{}", serde_json::to_string(&header).expect("serializable")).map_err(io)?;
        Ok(Self {
            path: path.to_path_buf(),
            writer,
        })
    }

    pub fn append(&mut self, event: &ManifestEvent) -> Result<(), StoreError> {
        writeln!(self.writer, "{}", serde_json::to_string(event).expect("serializable")).map_err(|source| {
            StoreError::Io {
                path: self.path.display().to_string(),
                source,
            }
        })
    }

    pub fn finish(mut self) -> Result<(), StoreError> {
        self.writer.flush().map_err(|source| StoreError::Io {
            path: self.path.display().to_string(),
            source,
        })
    }
}

pub fn read_manifest(path: &Path) -> Result<(ManifestHeader, Vec<ManifestEvent>), StoreError> {
    let text = fs::read_to_string(path).map_err(|source| StoreError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut lines = text.lines();
    let header: ManifestHeader = serde_json::from_str(lines.next().unwrap_or(""))
        .map_err(|e| StoreError::WrongFormat(format!("manifest header: {e}")))?;
    if header.format != MANIFEST_FORMAT {
        return Err(StoreError::WrongFormat(header.format));
    }
    if header.version != MANIFEST_VERSION {
        return Err(StoreError::UnsupportedVersion {
            found: header.version.to_string(),
        });
    }
    let events = lines
        .enumerate()
        .map(|(n, line)| {
            serde_json::from_str(line).map_err(|e| StoreError::Corrupt(format!("manifest line {}: {e}", n + 2)))
        })
        .collect::<Result<_, _>>()?;
    Ok((header, events))
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReplayError {
    #[error("{conversation_id} session {session_index}: removed {cluster} which is not pooled")]
    RemovedUnknown {
        conversation_id: String,
        session_index: u32,
        cluster: String,
    },
    #[error("{conversation_id} session {session_index}: replayed pool {replayed:?} but manifest says {recorded:?}")]
    Diverged {
        conversation_id: String,
        session_index: u32,
        replayed: Vec<String>,
        recorded: Vec<String>,
    },
    #[error("{conversation_id} session {session_index}: removed {cluster} has no connected pair")]
    UnpairedRemoval {
        conversation_id: String,
        session_index: u32,
        cluster: String,
    },
}

/// Rebuilds each conversation's pool from `pool_updated` events alone and
/// checks it against every recorded `pool_after`. Also checks that every
/// removal is backed by a connected pair in the same session.
pub fn replay_pool(events: &[ManifestEvent]) -> Result<BTreeMap<String, Vec<String>>, ReplayError> {
    let mut pools: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut connected: BTreeSet<(String, u32, String)> = BTreeSet::new();
    for event in events {
        match event {
            ManifestEvent::PairConnected {
                conversation_id,
                session_index,
                pool_cluster_id,
                ..
            } => {
                connected.insert((conversation_id.clone(), *session_index, pool_cluster_id.clone()));
            }
            ManifestEvent::PoolUpdated {
                conversation_id,
                session_index,
                removed,
                added,
                pool_after,
            } => {
                let pool = pools.entry(conversation_id.clone()).or_default();
                for cluster in removed {
                    if !connected.contains(&(conversation_id.clone(), *session_index, cluster.clone())) {
                        return Err(ReplayError::UnpairedRemoval {
                            conversation_id: conversation_id.clone(),
                            session_index: *session_index,
                            cluster: cluster.clone(),
                        });
                    }
                    let Some(at) = pool.iter().position(|c| c == cluster) else {
                        return Err(ReplayError::RemovedUnknown {
                            conversation_id: conversation_id.clone(),
                            session_index: *session_index,
                            cluster: cluster.clone(),
                        });
                    };
                    pool.remove(at);
                }
                pool.extend(added.iter().cloned());
                if pool != pool_after {
                    return Err(ReplayError::Diverged {
                        conversation_id: conversation_id.clone(),
                        session_index: *session_index,
                        replayed: pool.clone(),
                        recorded: pool_after.clone(),
                    });
                }
            }
            _ => {}
        }
    }
    Ok(pools)
}
