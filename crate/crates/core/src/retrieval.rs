//! Inference: rank 𝓜 ∪ 𝓡, fill a token budget, answer.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::gateway::{Gateway, GatewayError, Role};
use crate::memory::{MemoryError, MemoryStore};
use crate::model::{chronological, MemoryFragment};
use crate::prompts;
use crate::vector::{EmbeddingBackend, EmbeddingError, VectorError};

pub const MIN_TOKEN_BUDGET: usize = 64;
pub const DEFAULT_OVERFETCH: usize = 200;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("token budget {0} is below the minimum of {MIN_TOKEN_BUDGET}")]
    BudgetTooSmall(usize),
    #[error("overfetch_k must be positive")]
    ZeroOverfetch,
    #[error("dense retrieval needs an embedding backend")]
    NoEmbedder,
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Vector(#[from] VectorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RetrievalMode {
    #[default]
    Dense,
    Bm25,
}

impl fmt::Display for RetrievalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RetrievalMode::Dense => "dense",
            RetrievalMode::Bm25 => "bm25",
        })
    }
}

impl FromStr for RetrievalMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dense" => Ok(RetrievalMode::Dense),
            "bm25" => Ok(RetrievalMode::Bm25),
            other => Err(format!("unknown retriever {other:?} (expected dense or bm25)")),
        }
    }
}

/// Counts tokens in rendered context text.
pub trait Tokenizer: Send + Sync + fmt::Debug {
    fn count(&self, text: &str) -> usize;
}

/// `ceil(words × 4/3)` over whitespace-delimited words.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordHeuristic;

impl Tokenizer for WordHeuristic {
    fn count(&self, text: &str) -> usize {
        let words = text.split_whitespace().count();
        (words * 4).div_ceil(3)
    }
}

pub fn count_tokens(text: &str, tokenizer: &dyn Tokenizer) -> usize {
    tokenizer.count(text)
}

#[derive(Debug, Clone)]
pub struct RetrievalConfig {
    mode: RetrievalMode,
    token_budget: usize,
    overfetch_k: usize,
    tokenizer: Arc<dyn Tokenizer>,
}

impl RetrievalConfig {
    pub fn new(mode: RetrievalMode, token_budget: usize) -> Result<Self, RetrievalError> {
        if token_budget < MIN_TOKEN_BUDGET {
            return Err(RetrievalError::BudgetTooSmall(token_budget));
        }
        Ok(Self {
            mode,
            token_budget,
            overfetch_k: DEFAULT_OVERFETCH,
            tokenizer: Arc::new(WordHeuristic),
        })
    }

    pub fn with_overfetch(mut self, k: usize) -> Result<Self, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroOverfetch);
        }
        self.overfetch_k = k;
        Ok(self)
    }

    pub fn with_tokenizer(mut self, tokenizer: Arc<dyn Tokenizer>) -> Self {
        self.tokenizer = tokenizer;
        self
    }

    pub fn mode(&self) -> RetrievalMode {
        self.mode
    }

    pub fn token_budget(&self) -> usize {
        self.token_budget
    }

    pub fn overfetch_k(&self) -> usize {
        self.overfetch_k
    }

    pub fn tokenizer(&self) -> &dyn Tokenizer {
        self.tokenizer.as_ref()
    }
}

/// The `overfetch_k` best fragments for `query`, best first.
///
/// Dense mode embeds the raw query; `embedder` is unused in BM25 mode.
pub fn retrieve(
    query: &str,
    store: &MemoryStore,
    config: &RetrievalConfig,
    embedder: Option<&dyn EmbeddingBackend>,
) -> Result<Vec<(String, f64)>, RetrievalError> {
    if store.is_empty() {
        return Ok(Vec::new());
    }
    match config.mode {
        RetrievalMode::Dense => {
            let embedder = embedder.ok_or(RetrievalError::NoEmbedder)?;
            let query = embedder.embed(query)?;
            Ok(store.dense()?.topk(&query, config.overfetch_k)?)
        }
        RetrievalMode::Bm25 => Ok(store.bm25()?.topk(query, config.overfetch_k)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssembledContext {
    /// Rendered fragments in chronological order.
    pub lines: Vec<String>,
    pub token_count: usize,
    pub included_fragment_ids: Vec<String>,
    pub token_budget: usize,
    pub warnings: Vec<String>,
}

impl AssembledContext {
    pub fn text(&self) -> String {
        self.lines.join("\n")
    }
}

fn render(fragments: &[&MemoryFragment]) -> (Vec<String>, String) {
    let mut sorted = fragments.to_vec();
    sorted.sort_by(|a, b| chronological(a, b));
    let lines: Vec<String> = sorted.iter().map(|f| f.render_line()).collect();
    let text = lines.join("\n");
    (lines, text)
}

/// Admits candidates in rank order while the rendered context stays within
/// the budget. A candidate that does not fit is skipped and the next one is
/// tried. Unknown ids are ignored with a warning.
pub fn assemble_context(
    candidates: &[(String, f64)],
    store: &MemoryStore,
    config: &RetrievalConfig,
) -> AssembledContext {
    let mut admitted: Vec<&MemoryFragment> = Vec::new();
    let mut warnings = Vec::new();
    let mut token_count = 0;
    for (id, _) in candidates {
        let Some(fragment) = store.get(id) else {
            warnings.push(format!("candidate {id} not in store"));
            continue;
        };
        if admitted.iter().any(|f| f.fragment_id == *id) {
            continue;
        }
        admitted.push(fragment);
        let tokens = config.tokenizer.count(&render(&admitted).1);
        if tokens <= config.token_budget {
            token_count = tokens;
        } else {
            admitted.pop();
        }
    }
    if admitted.is_empty() && !candidates.is_empty() {
        let warning = format!("no candidate fits within {} tokens", config.token_budget);
        log::warn!("{warning}");
        warnings.push(warning);
    }
    let (lines, _) = render(&admitted);
    let mut sorted = admitted.clone();
    sorted.sort_by(|a, b| chronological(a, b));
    AssembledContext {
        lines,
        token_count,
        included_fragment_ids: sorted.iter().map(|f| f.fragment_id.clone()).collect(),
        token_budget: config.token_budget,
        warnings,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DatasetStyle {
    #[default]
    Locomo,
    LongMemEval,
}

impl FromStr for DatasetStyle {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "locomo" => Ok(DatasetStyle::Locomo),
            "longmemeval" => Ok(DatasetStyle::LongMemEval),
            other => Err(format!("unknown dataset style {other:?}")),
        }
    }
}

pub fn build_answer_prompt(question: &str, context: &AssembledContext, style: DatasetStyle) -> String {
    let template = match style {
        DatasetStyle::Locomo => prompts::ANSWER_LOCOMO,
        DatasetStyle::LongMemEval => prompts::ANSWER_LONGMEMEVAL,
    };
    prompts::render(template, &[("context", &context.text()), ("question", question)])
        .expect("answer templates use only context and question")
}

/// One response-model call; the reply is trimmed.
pub fn answer(
    question: &str,
    context: &AssembledContext,
    gateway: &Gateway,
    style: DatasetStyle,
) -> Result<String, GatewayError> {
    let request = gateway.request(Role::Response, build_answer_prompt(question, context, style));
    Ok(gateway.complete(&request)?.trim().to_string())
}
