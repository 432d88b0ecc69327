//! Session clustering, connected pairs, cross-session reasoning and the
//! persistent pool.

mod cluster;
mod reason;

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cluster::{
    cluster_session, kmeans, mean_silhouette, select_k, ClusteringReport, KCandidate, KMeansConfig, KMeansFit,
    SilhouetteError,
};
pub use reason::{build_reasoning_prompt, parse_reasoning, reason_pair, PairReasoning, INSIGHT_KEY};

use crate::gateway::{Gateway, GatewayError};
use crate::model::{reasoned_id, MemoryFragment};
use crate::prompts::PromptError;
use crate::vector::{cosine, Embedding, VectorError};

#[derive(Debug, thiserror::Error)]
pub enum ConsolidationError {
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error("{fragments} fragments but {vectors} vectors")]
    LengthMismatch { fragments: usize, vectors: usize },
    #[error("pair references unknown cluster {0}")]
    UnknownCluster(String),
    #[error("pair {0} has an empty side")]
    EmptyPairSide(String),
    #[error("fragment {0} missing from the memory store")]
    UnknownFragment(String),
    #[error("session {got} follows session {previous}")]
    SessionOrder { previous: u32, got: u32 },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub cluster_id: String,
    pub session_index: u32,
    pub member_fragment_ids: Vec<String>,
    /// Mean of the member vectors.
    pub centroid: Embedding,
}

/// Clusters still waiting for a later match. Order: survivors first, then
/// each session's new clusters in ordinal order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PersistentPool {
    pub clusters: Vec<Cluster>,
}

impl PersistentPool {
    pub fn ids(&self) -> Vec<String> {
        self.clusters.iter().map(|c| c.cluster_id.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectedPair {
    pub pool_cluster_id: String,
    pub new_cluster_id: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsolidationConfig {
    pub theta: f64,
    pub k_min: usize,
    /// Upper cap; the effective bound is `min(k_max, n − 1)`.
    pub k_max: usize,
    pub reasoning_enabled: bool,
    pub kmeans: KMeansConfig,
    /// Reason about a session's pairs on the rayon pool.
    pub parallel: bool,
}

impl Default for ConsolidationConfig {
    fn default() -> Self {
        Self {
            theta: 0.6,
            k_min: 2,
            k_max: 10,
            reasoning_enabled: true,
            kmeans: KMeansConfig::default(),
            parallel: true,
        }
    }
}

/// Every (pool, new) pair whose centroid cosine is strictly above `theta`,
/// sorted by (pool id, new id).
pub fn connected_pairs(
    pool: &PersistentPool,
    new_clusters: &[Cluster],
    theta: f64,
) -> Result<Vec<ConnectedPair>, VectorError> {
    let mut pairs = Vec::new();
    for p in &pool.clusters {
        for c in new_clusters {
            let similarity = cosine(&p.centroid, &c.centroid)?;
            if similarity > theta {
                pairs.push(ConnectedPair {
                    pool_cluster_id: p.cluster_id.clone(),
                    new_cluster_id: c.cluster_id.clone(),
                    similarity,
                });
            }
        }
    }
    pairs.sort_by(|a, b| (&a.pool_cluster_id, &a.new_cluster_id).cmp(&(&b.pool_cluster_id, &b.new_cluster_id)));
    Ok(pairs)
}

/// `P_i = P_{i−1} \ {p : ∃c (p, c) ∈ CP_i} ∪ C_i`.
pub fn update_pool(
    pool: &PersistentPool,
    new_clusters: &[Cluster],
    pairs: &[ConnectedPair],
) -> Result<PersistentPool, ConsolidationError> {
    let pool_ids: BTreeSet<&str> = pool.clusters.iter().map(|c| c.cluster_id.as_str()).collect();
    let new_ids: BTreeSet<&str> = new_clusters.iter().map(|c| c.cluster_id.as_str()).collect();
    let mut matched = BTreeSet::new();
    for pair in pairs {
        if !pool_ids.contains(pair.pool_cluster_id.as_str()) {
            return Err(ConsolidationError::UnknownCluster(pair.pool_cluster_id.clone()));
        }
        if !new_ids.contains(pair.new_cluster_id.as_str()) {
            return Err(ConsolidationError::UnknownCluster(pair.new_cluster_id.clone()));
        }
        matched.insert(pair.pool_cluster_id.as_str());
    }
    let clusters = pool
        .clusters
        .iter()
        .filter(|c| !matched.contains(c.cluster_id.as_str()))
        .chain(new_clusters)
        .cloned()
        .collect();
    Ok(PersistentPool { clusters })
}

/// One session's extracted fragments and their embeddings.
#[derive(Debug, Clone)]
pub struct SessionMemory {
    pub session_index: u32,
    pub session_date: NaiveDate,
    pub fragments: Vec<MemoryFragment>,
    pub vectors: Vec<Embedding>,
}

/// Audit record of one session's pass through consolidation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionTrace {
    pub session_index: u32,
    pub clustering: ClusteringReport,
    pub clusters: Vec<ClusterSummary>,
    pub pool_before: Vec<String>,
    pub pairs: Vec<ConnectedPair>,
    pub reasoned: Vec<PairSummary>,
    pub pool_after: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster_id: String,
    pub member_fragment_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairSummary {
    pub pool_cluster_id: String,
    pub new_cluster_id: String,
    pub fragment_ids: Vec<String>,
    pub skipped: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct Consolidated {
    /// 𝓜: extracted fragments, by id.
    pub memory: BTreeMap<String, MemoryFragment>,
    pub memory_vectors: BTreeMap<String, Embedding>,
    /// 𝓡: reasoning fragments, by id.
    pub reasoning: BTreeMap<String, MemoryFragment>,
    pub pool: PersistentPool,
    pub trace: Vec<SessionTrace>,
}

/// Runs clustering, pairing, reasoning and the pool update over sessions in
/// order.
///
/// With reasoning disabled the pairs are still computed and the pool still
/// retires matched clusters; only the model calls are skipped.
pub fn consolidate_conversation(
    sessions: &[SessionMemory],
    config: &ConsolidationConfig,
    gateway: &Gateway,
) -> Result<Consolidated, ConsolidationError> {
    let mut state = Consolidated::default();
    let mut previous: Option<u32> = None;
    for session in sessions {
        if let Some(prev) = previous {
            if session.session_index <= prev {
                return Err(ConsolidationError::SessionOrder {
                    previous: prev,
                    got: session.session_index,
                });
            }
        }
        previous = Some(session.session_index);
        consolidate_session(&mut state, session, config, gateway)?;
    }
    Ok(state)
}

/// Advances `state` by one session.
pub fn consolidate_session(
    state: &mut Consolidated,
    session: &SessionMemory,
    config: &ConsolidationConfig,
    gateway: &Gateway,
) -> Result<(), ConsolidationError> {
    let (clusters, clustering) = cluster_session(session.session_index, &session.fragments, &session.vectors, config)?;
    for (fragment, vector) in session.fragments.iter().zip(&session.vectors) {
        state.memory.insert(fragment.fragment_id.clone(), fragment.clone());
        state
            .memory_vectors
            .insert(fragment.fragment_id.clone(), vector.clone());
    }

    let pairs = connected_pairs(&state.pool, &clusters, config.theta)?;
    let mut reasoned = Vec::new();
    if config.reasoning_enabled && !pairs.is_empty() {
        let by_id: BTreeMap<&str, &Cluster> = state
            .pool
            .clusters
            .iter()
            .chain(&clusters)
            .map(|c| (c.cluster_id.as_str(), c))
            .collect();
        let members = |cluster_id: &str| -> Result<Vec<&MemoryFragment>, ConsolidationError> {
            let cluster = by_id
                .get(cluster_id)
                .ok_or_else(|| ConsolidationError::UnknownCluster(cluster_id.to_string()))?;
            cluster
                .member_fragment_ids
                .iter()
                .map(|id| {
                    state
                        .memory
                        .get(id)
                        .ok_or_else(|| ConsolidationError::UnknownFragment(id.clone()))
                })
                .collect()
        };
        let reason = |pair: &ConnectedPair| -> Result<PairReasoning, ConsolidationError> {
            let pool_side = members(&pair.pool_cluster_id)?;
            let new_side = members(&pair.new_cluster_id)?;
            reason_pair(
                pair,
                &pool_side,
                &new_side,
                session.session_index,
                session.session_date,
                gateway,
            )
        };
        let outcomes: Vec<Result<PairReasoning, ConsolidationError>> = if config.parallel {
            pairs.par_iter().map(reason).collect()
        } else {
            pairs.iter().map(reason).collect()
        };

        let mut ordinal = 0;
        let mut new_fragments = Vec::new();
        for (pair, outcome) in pairs.iter().zip(outcomes) {
            let outcome = outcome?;
            let mut ids = Vec::new();
            for mut fragment in outcome.fragments {
                ordinal += 1;
                fragment.fragment_id = reasoned_id(session.session_index, ordinal);
                ids.push(fragment.fragment_id.clone());
                new_fragments.push(fragment);
            }
            reasoned.push(PairSummary {
                pool_cluster_id: pair.pool_cluster_id.clone(),
                new_cluster_id: pair.new_cluster_id.clone(),
                fragment_ids: ids,
                skipped: outcome.skipped,
                warnings: outcome.warnings,
            });
        }
        for fragment in new_fragments {
            state.reasoning.insert(fragment.fragment_id.clone(), fragment);
        }
    }

    let pool_before = state.pool.ids();
    state.pool = update_pool(&state.pool, &clusters, &pairs)?;
    state.trace.push(SessionTrace {
        session_index: session.session_index,
        clustering,
        clusters: clusters
            .iter()
            .map(|c| ClusterSummary {
                cluster_id: c.cluster_id.clone(),
                member_fragment_ids: c.member_fragment_ids.clone(),
            })
            .collect(),
        pool_before,
        pairs,
        reasoned,
        pool_after: state.pool.ids(),
    });
    Ok(())
}
