use premem::consolidation::ConsolidationError;
use premem::eval::{DatasetError, EvalError};
use premem::extraction::ExtractionError;
use premem::gateway::GatewayError;
use premem::memory::MemoryError;
use premem::pipeline::BuildError;
use premem::retrieval::RetrievalError;
use premem::store::StoreError;
use premem::vector::EmbeddingError;

/// Every failure carries the process exit code the binary reports.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("gateway: {0}")]
    Gateway(String),
    #[error("internal: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Gateway(_) => 4,
            CliError::Internal(_) => 5,
        }
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::InvalidRequest(m) => CliError::Config(m),
            other => CliError::Gateway(other.to_string()),
        }
    }
}

impl From<EmbeddingError> for CliError {
    fn from(e: EmbeddingError) -> Self {
        match e {
            EmbeddingError::Unavailable(_) => CliError::Gateway(e.to_string()),
            EmbeddingError::CacheCorrupt { .. } | EmbeddingError::Io(_) => CliError::Data(e.to_string()),
            EmbeddingError::Vector(_) => CliError::Internal(e.to_string()),
        }
    }
}

impl From<MemoryError> for CliError {
    fn from(e: MemoryError) -> Self {
        match e {
            MemoryError::Embedding(inner) => inner.into(),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<ConsolidationError> for CliError {
    fn from(e: ConsolidationError) -> Self {
        match e {
            ConsolidationError::Gateway(inner) => inner.into(),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<BuildError> for CliError {
    fn from(e: BuildError) -> Self {
        let context = e.to_string();
        let kind: CliError = match e {
            BuildError::Extraction { source, .. } => match source {
                ExtractionError::Gateway(inner) => inner.into(),
                ExtractionError::Prompt(p) => CliError::Internal(p.to_string()),
            },
            BuildError::Embedding(inner) => inner.into(),
            BuildError::Consolidation(inner) => inner.into(),
            BuildError::Memory(inner) => inner.into(),
        };
        kind.with_message(context)
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotSealed | StoreError::Memory(_) => CliError::Internal(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<RetrievalError> for CliError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::BudgetTooSmall(_) | RetrievalError::ZeroOverfetch | RetrievalError::NoEmbedder => {
                CliError::Config(e.to_string())
            }
            RetrievalError::Embedding(inner) => inner.into(),
            RetrievalError::Memory(inner) => inner.into(),
            RetrievalError::Vector(_) => CliError::Internal(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        let context = e.to_string();
        let kind: CliError = match e {
            EvalError::Dataset(inner) => inner.into(),
            EvalError::Build { source, .. } => source.into(),
            EvalError::Retrieval { source, .. } => source.into(),
            EvalError::Gateway { source, .. } => source.into(),
            EvalError::MissingStore(_) => CliError::Internal(String::new()),
        };
        kind.with_message(context)
    }
}

impl CliError {
    fn with_message(self, message: String) -> Self {
        match self {
            CliError::Config(_) => CliError::Config(message),
            CliError::Data(_) => CliError::Data(message),
            CliError::Gateway(_) => CliError::Gateway(message),
            CliError::Internal(_) => CliError::Internal(message),
        }
    }
}

pub(crate) fn io_error(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}
