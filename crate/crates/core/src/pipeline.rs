//! Memory construction for one conversation: extract, embed, consolidate,
//! seal.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::consolidation::{consolidate_session, Consolidated, ConsolidationConfig, ConsolidationError, SessionMemory};
use crate::extraction::{extract_session, ExtractionConfig, ExtractionError, ExtractionOutcome};
use crate::gateway::{Gateway, ModelNames};
use crate::memory::{MemoryError, MemoryStore};
use crate::model::Conversation;
use crate::store::{events_from_trace, ManifestEvent};
use crate::vector::{embed_fragment, EmbeddingBackend, EmbeddingError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct BuildConfig {
    pub extraction: ExtractionConfig,
    pub consolidation: ConsolidationConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error("session {session}: {source}")]
    Extraction {
        session: u32,
        #[source]
        source: ExtractionError,
    },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Consolidation(#[from] ConsolidationError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

/// SHA-256 over the canonical JSON of everything that shapes a store.
pub fn config_hash(config: &BuildConfig, models: &ModelNames, embedder_id: &str) -> String {
    let canonical = serde_json::json!({
        "build": config,
        "models": models,
        "embedder": embedder_id,
    });
    hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
}

#[derive(Debug, Clone)]
pub struct BuildOutput {
    /// Sealed; reasoning fragments are embedded.
    pub store: MemoryStore,
    pub events: Vec<ManifestEvent>,
}

/// Runs Steps 1 and 2 over every session and returns a sealed store.
///
/// Sessions are extracted and embedded in parallel when
/// `config.consolidation.parallel` is set, then consolidated strictly in
/// order.
pub fn build_memory(
    conversation: &Conversation,
    config: &BuildConfig,
    gateway: &Gateway,
    embedder: &dyn EmbeddingBackend,
) -> Result<BuildOutput, BuildError> {
    let prepare = |session: &crate::model::Session| -> Result<(ExtractionOutcome, SessionMemory), BuildError> {
        let outcome =
            extract_session(session, gateway, &config.extraction).map_err(|source| BuildError::Extraction {
                session: session.session_index(),
                source,
            })?;
        let vectors = outcome
            .fragments
            .iter()
            .map(|f| embed_fragment(f, embedder))
            .collect::<Result<Vec<_>, _>>()?;
        let memory = SessionMemory {
            session_index: session.session_index(),
            session_date: session.session_date(),
            fragments: outcome.fragments.clone(),
            vectors,
        };
        Ok((outcome, memory))
    };
    let prepared: Vec<Result<_, BuildError>> = if config.consolidation.parallel {
        conversation.sessions().par_iter().map(prepare).collect()
    } else {
        conversation.sessions().iter().map(prepare).collect()
    };

    let mut state = Consolidated::default();
    let mut extracted = Vec::new();
    for result in prepared {
        let (outcome, memory) = result?;
        consolidate_session(&mut state, &memory, &config.consolidation, gateway)?;
        extracted.push(ManifestEvent::SessionExtracted {
            conversation_id: conversation.conversation_id.clone(),
            session_index: memory.session_index,
            fragment_ids: outcome.fragments.iter().map(|f| f.fragment_id.clone()).collect(),
            warnings: outcome.warnings,
        });
    }

    let consolidation_events = events_from_trace(&conversation.conversation_id, &state.trace);
    let mut events = Vec::with_capacity(extracted.len() + consolidation_events.len());
    let mut pending = consolidation_events.into_iter().peekable();
    for extraction_event in extracted {
        let ManifestEvent::SessionExtracted { session_index, .. } = &extraction_event else {
            unreachable!("only extraction events are collected here");
        };
        let session_index = *session_index;
        events.push(extraction_event);
        while let Some(event) = pending.next_if(|e| event_session(e) == session_index) {
            events.push(event);
        }
    }
    events.extend(pending);

    let hash = config_hash(config, gateway.models(), &embedder.backend_id());
    let mut store = MemoryStore::from_consolidated(conversation.conversation_id.clone(), embedder, hash, state);
    store.seal(Some(embedder))?;
    Ok(BuildOutput { store, events })
}

fn event_session(event: &ManifestEvent) -> u32 {
    match event {
        ManifestEvent::SessionExtracted { session_index, .. }
        | ManifestEvent::SessionClustered { session_index, .. }
        | ManifestEvent::PairConnected { session_index, .. }
        | ManifestEvent::PairReasoned { session_index, .. }
        | ManifestEvent::PoolUpdated { session_index, .. }
        | ManifestEvent::SessionConsolidated { session_index, .. } => *session_index,
    }
}
