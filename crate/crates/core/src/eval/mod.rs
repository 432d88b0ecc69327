//! Benchmark harness: load, build memories, answer, score, aggregate.

pub mod dataset;
pub mod judge;
pub mod metrics;
pub mod report;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde_json::Value;

pub use dataset::{
    load_dataset, unify_category, Dataset, DatasetError, DatasetKind, LocomoCategoryMap, QaItem, UnifiedCategory,
};
pub use judge::{adversarial_accuracy, judge, AbstentionPatterns, JudgeOutcome};
pub use report::{EvalReport, ItemRecord, MetricSummary, REPORT_SCHEMA_VERSION};

use crate::gateway::{Gateway, GatewayError};
use crate::memory::MemoryStore;
use crate::pipeline::{build_memory, BuildConfig, BuildError, BuildOutput};
use crate::retrieval::{answer, assemble_context, retrieve, RetrievalConfig, RetrievalError};
use crate::store::ManifestEvent;
use crate::vector::EmbeddingBackend;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("conversation {conversation}: {source}")]
    Build {
        conversation: String,
        #[source]
        source: BuildError,
    },
    #[error("question {question}: {source}")]
    Retrieval {
        question: String,
        #[source]
        source: RetrievalError,
    },
    #[error("question {question}: {source}")]
    Gateway {
        question: String,
        #[source]
        source: GatewayError,
    },
    #[error("no memory store for conversation {0}")]
    MissingStore(String),
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub retrieval: RetrievalConfig,
    pub abstention: AbstentionPatterns,
    pub label: String,
    /// Recorded verbatim in the report.
    pub config: Value,
    pub parallel: bool,
}

/// Builds one store per conversation, in dataset order.
pub fn build_stores(
    dataset: &Dataset,
    build: &BuildConfig,
    gateway: &Gateway,
    embedder: &dyn EmbeddingBackend,
    parallel: bool,
) -> Result<Vec<BuildOutput>, EvalError> {
    let one = |conversation: &crate::model::Conversation| {
        build_memory(conversation, build, gateway, embedder).map_err(|source| EvalError::Build {
            conversation: conversation.conversation_id.clone(),
            source,
        })
    };
    if parallel {
        dataset.conversations.par_iter().map(one).collect()
    } else {
        dataset.conversations.iter().map(one).collect()
    }
}

/// Answers and scores one question against its conversation's store.
pub fn evaluate_item(
    item: &QaItem,
    store: &MemoryStore,
    options: &EvalOptions,
    style: crate::retrieval::DatasetStyle,
    gateway: &Gateway,
    embedder: &dyn EmbeddingBackend,
) -> Result<ItemRecord, EvalError> {
    let retrieval_error = |source| EvalError::Retrieval {
        question: item.question_id.clone(),
        source,
    };
    let gateway_error = |source| EvalError::Gateway {
        question: item.question_id.clone(),
        source,
    };
    let ranked = retrieve(&item.question, store, &options.retrieval, Some(embedder)).map_err(retrieval_error)?;
    let context = assemble_context(&ranked, store, &options.retrieval);
    let prediction = answer(&item.question, &context, gateway, style).map_err(gateway_error)?;

    let adversarial = item.category == UnifiedCategory::Adversarial;
    let (llm_judge, judge_failure, abstained) = if adversarial {
        (None, false, Some(options.abstention.abstains(&prediction)))
    } else {
        let outcome = judge(&item.question, &item.gold_answer, &prediction, gateway).map_err(gateway_error)?;
        (outcome.score(), outcome.score().is_none(), None)
    };
    Ok(ItemRecord {
        question_id: item.question_id.clone(),
        conversation_id: item.conversation_id.clone(),
        category: item.category,
        raw_type: item.raw_type.clone(),
        question: item.question.clone(),
        gold_answer: item.gold_answer.clone(),
        bleu1: metrics::bleu1(&prediction, &item.gold_answer),
        rouge1: metrics::rouge1(&prediction, &item.gold_answer).f1,
        rouge_l: metrics::rouge_l(&prediction, &item.gold_answer).f1,
        prediction,
        llm_judge,
        judge_failure,
        abstained,
        context_tokens: context.token_count,
        context_fragments: context.lines.len(),
    })
}

/// Scores every question with already-built stores.
pub fn evaluate(
    dataset: &Dataset,
    stores: &BTreeMap<String, MemoryStore>,
    options: &EvalOptions,
    gateway: &Gateway,
    embedder: &dyn EmbeddingBackend,
) -> Result<EvalReport, EvalError> {
    let style = dataset.kind.style();
    let one = |item: &QaItem| {
        let store = stores
            .get(&item.conversation_id)
            .ok_or_else(|| EvalError::MissingStore(item.conversation_id.clone()))?;
        evaluate_item(item, store, options, style, gateway, embedder)
    };
    let records: Vec<ItemRecord> = if options.parallel {
        dataset.items.par_iter().map(one).collect::<Result<_, _>>()?
    } else {
        dataset.items.iter().map(one).collect::<Result<_, _>>()?
    };
    Ok(EvalReport::new(
        dataset.kind,
        options.label.clone(),
        options.config.clone(),
        records,
    ))
}

#[derive(Debug, Clone)]
pub struct EvalRun {
    pub report: EvalReport,
    pub stores: BTreeMap<String, MemoryStore>,
    pub events: Vec<ManifestEvent>,
}

/// Builds memories for every conversation, then evaluates.
pub fn run_eval(
    dataset: &Dataset,
    build: &BuildConfig,
    options: &EvalOptions,
    gateway: &Gateway,
    embedder: &dyn EmbeddingBackend,
) -> Result<EvalRun, EvalError> {
    let outputs = build_stores(dataset, build, gateway, embedder, options.parallel)?;
    let mut events = Vec::new();
    let mut stores = BTreeMap::new();
    for output in outputs {
        events.extend(output.events);
        stores.insert(output.store.conversation_id().to_string(), output.store);
    }
    let report = evaluate(dataset, &stores, options, gateway, embedder)?;
    Ok(EvalRun { report, stores, events })
}
