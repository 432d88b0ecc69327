//! Cross-session reasoning over one connected pair.

use std::collections::BTreeSet;

use chrono::NaiveDate;
use serde_json::Value;

use super::{ConnectedPair, ConsolidationError};
use crate::gateway::{Gateway, GatewayError, Role};
use crate::model::{chronological, Category, InferenceType, MemoryFragment, SourcePair};
use crate::prompts::{self, PromptError};
use crate::temporal::parse_temporal;

pub const INSIGHT_KEY: &str = "extended_insight";

/// The Step-2 prompt for `M_p ∪ M_c`, fragments in chronological order.
pub fn build_reasoning_prompt(
    pool_fragments: &[&MemoryFragment],
    new_fragments: &[&MemoryFragment],
) -> Result<String, PromptError> {
    let mut all: Vec<&MemoryFragment> = pool_fragments.iter().chain(new_fragments).copied().collect();
    all.sort_by(|a, b| chronological(a, b));
    let body = all.iter().map(|f| f.render_line()).collect::<Vec<_>>().join("\n\n");
    prompts::render(prompts::REASONING, &[("memory_fragments", &body)])
}

/// Reasoning result for one pair. Fragment ids are empty until the session
/// merge assigns them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairReasoning {
    pub fragments: Vec<MemoryFragment>,
    pub warnings: Vec<String>,
    /// Set when the pair was skipped after a structured-output failure.
    pub skipped: bool,
}

/// Parses an `extended_insight` reply. Entries with an unknown inference
/// type, or without key or value, are dropped with a warning.
pub fn parse_reasoning(
    tree: &Value,
    pair: &ConnectedPair,
    session_index: u32,
    fallback_date: NaiveDate,
    source_message_ids: &[String],
) -> PairReasoning {
    let mut out = PairReasoning::default();
    let entries = match tree.get(INSIGHT_KEY) {
        Some(Value::Array(entries)) => entries.as_slice(),
        _ => {
            out.warnings.push(format!("{INSIGHT_KEY} is not a list"));
            &[]
        }
    };
    for (position, entry) in entries.iter().enumerate() {
        let field = |name: &str| {
            entry
                .get(name)
                .and_then(Value::as_str)
                .map(str::trim)
                .filter(|s| !s.is_empty())
        };
        let inference_type = match field("inference_type").map(str::parse::<InferenceType>) {
            Some(Ok(t)) => t,
            Some(Err(e)) => {
                out.warnings.push(format!("{INSIGHT_KEY}[{position}] dropped: {e}"));
                continue;
            }
            None => {
                out.warnings
                    .push(format!("{INSIGHT_KEY}[{position}] dropped: missing inference_type"));
                continue;
            }
        };
        let (Some(key), Some(content)) = (field("key"), field("value").or_else(|| field("content"))) else {
            out.warnings
                .push(format!("{INSIGHT_KEY}[{position}] dropped: missing key or value"));
            continue;
        };
        let mut warnings = Vec::new();
        let temporal = match field("date") {
            Some(date) => {
                let parsed = parse_temporal(date, fallback_date);
                warnings.extend(parsed.warning);
                parsed.value
            }
            None => {
                warnings.push("missing date; using session date".into());
                crate::temporal::TemporalRef::OnDate(fallback_date)
            }
        };
        out.fragments.push(MemoryFragment {
            fragment_id: String::new(),
            key: key.to_string(),
            content: content.to_string(),
            category: Category::Reasoning,
            temporal,
            source_message_ids: source_message_ids.to_vec(),
            session_index,
            inference_type: Some(inference_type),
            source_pair: Some(SourcePair {
                pool_cluster: pair.pool_cluster_id.clone(),
                new_cluster: pair.new_cluster_id.clone(),
            }),
            warnings,
        });
    }
    out
}

/// Asks the reasoning model about one pair.
///
/// A reply that stays malformed after the gateway's repair retries skips
/// the pair; any other gateway failure is returned.
pub fn reason_pair(
    pair: &ConnectedPair,
    pool_fragments: &[&MemoryFragment],
    new_fragments: &[&MemoryFragment],
    session_index: u32,
    session_date: NaiveDate,
    gateway: &Gateway,
) -> Result<PairReasoning, ConsolidationError> {
    if pool_fragments.is_empty() || new_fragments.is_empty() {
        return Err(ConsolidationError::EmptyPairSide(format!(
            "{} / {}",
            pair.pool_cluster_id, pair.new_cluster_id
        )));
    }
    let prompt = build_reasoning_prompt(pool_fragments, new_fragments)?;
    let request = gateway.request(Role::Reason, prompt);
    let tree = match gateway.complete_structured(&request, &[INSIGHT_KEY]) {
        Ok(tree) => tree,
        Err(GatewayError::StructuredOutput { reason, .. }) => {
            let warning = format!(
                "pair ({}, {}) skipped: {reason}",
                pair.pool_cluster_id, pair.new_cluster_id
            );
            log::warn!("{warning}");
            return Ok(PairReasoning {
                fragments: Vec::new(),
                warnings: vec![warning],
                skipped: true,
            });
        }
        Err(other) => return Err(other.into()),
    };
    let sources: BTreeSet<String> = pool_fragments
        .iter()
        .chain(new_fragments)
        .flat_map(|f| f.source_message_ids.iter().cloned())
        .collect();
    let sources: Vec<String> = sources.into_iter().collect();
    let outcome = parse_reasoning(&tree, pair, session_index, session_date, &sources);
    for warning in &outcome.warnings {
        log::warn!(
            "reasoning ({}, {}): {warning}",
            pair.pool_cluster_id,
            pair.new_cluster_id
        );
    }
    Ok(outcome)
}
