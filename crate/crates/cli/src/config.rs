//! Structured run configuration: a TOML file overlaid by command-line flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use premem::consolidation::{ConsolidationConfig, KMeansConfig};
use premem::eval::{AbstentionPatterns, DatasetKind, LocomoCategoryMap};
use premem::extraction::ExtractionConfig;
use premem::gateway::{
    ChatBackend, FixtureBackend, Gateway, HttpBackend, ModelNames, RecordingBackend, SyntheticBackend,
};
use premem::pipeline::BuildConfig;
use premem::retrieval::{RetrievalConfig, RetrievalMode};
use premem::vector::{Bm25Params, CachedEmbedder, EmbeddingBackend, HashEmbedder, HttpEmbedder, TokenHashEmbedder};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GatewayKind {
    /// Only `query --dry-run` works without a model.
    #[default]
    None,
    Synthetic,
    /// Replays recorded replies from `fixtures`.
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySection {
    pub backend: GatewayKind,
    pub fixtures: Option<PathBuf>,
    /// Wraps the backend so every reply is also written here.
    pub record_fixtures: Option<PathBuf>,
    pub base_url: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub retry_limit: u32,
    pub small_models: bool,
    /// Replaces the per-role names entirely when set.
    pub models: Option<ModelNames>,
}

impl Default for GatewaySection {
    fn default() -> Self {
        Self {
            backend: GatewayKind::None,
            fixtures: None,
            record_fixtures: None,
            base_url: None,
            api_key_env: None,
            retry_limit: 2,
            small_models: false,
            models: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingKind {
    Hash,
    #[default]
    TokenHash,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    pub backend: EmbeddingKind,
    pub dimension: usize,
    pub base_url: Option<String>,
    pub model: String,
    pub api_key_env: Option<String>,
    pub cache_dir: Option<PathBuf>,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        Self {
            backend: EmbeddingKind::TokenHash,
            dimension: 256,
            base_url: None,
            model: "text-embedding-3-small".into(),
            api_key_env: None,
            cache_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsolidationSection {
    pub theta: f64,
    pub k_max: usize,
    pub restarts: usize,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for ConsolidationSection {
    fn default() -> Self {
        let base = ConsolidationConfig::default();
        Self {
            theta: base.theta,
            k_max: base.k_max,
            restarts: base.kmeans.restarts,
            max_iterations: base.kmeans.max_iterations,
            seed: base.kmeans.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub mode: RetrievalMode,
    pub budget: usize,
    pub overfetch: usize,
    pub bm25_k1: f64,
    pub bm25_b: f64,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        let bm25 = Bm25Params::default();
        Self {
            mode: RetrievalMode::Dense,
            budget: 2048,
            overfetch: premem::retrieval::DEFAULT_OVERFETCH,
            bm25_k1: bm25.k1,
            bm25_b: bm25.b,
        }
    }
}

/// One row of the component ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    Full,
    NoStep1,
    NoStep2,
    NoCategories,
    NoTemporal,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Full,
        Ablation::NoStep1,
        Ablation::NoStep2,
        Ablation::NoCategories,
        Ablation::NoTemporal,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoStep1 => "no-step1",
            Ablation::NoStep2 => "no-step2",
            Ablation::NoCategories => "no-categories",
            Ablation::NoTemporal => "no-temporal",
        }
    }

    /// The flag set that reproduces this row.
    pub fn flags(&self) -> AblationSection {
        let mut flags = AblationSection::default();
        match self {
            Ablation::Full => {}
            Ablation::NoStep1 => flags.no_step1 = true,
            Ablation::NoStep2 => flags.no_step2 = true,
            Ablation::NoCategories => flags.no_categories = true,
            Ablation::NoTemporal => flags.no_temporal = true,
        }
        flags
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ablation::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            format!("unknown ablation {s:?} (expected one of full, no-step1, no-step2, no-categories, no-temporal)")
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub no_step1: bool,
    pub no_step2: bool,
    pub no_categories: bool,
    pub no_temporal: bool,
}

impl AblationSection {
    pub fn any(&self) -> bool {
        self.no_step1 || self.no_step2 || self.no_categories || self.no_temporal
    }

    /// Cell name for reports; combined flags join with `+`.
    pub fn label(&self) -> String {
        let names: Vec<&str> = [
            (self.no_step1, "no-step1"),
            (self.no_step2, "no-step2"),
            (self.no_categories, "no-categories"),
            (self.no_temporal, "no-temporal"),
        ]
        .into_iter()
        .filter_map(|(on, name)| on.then_some(name))
        .collect();
        if names.is_empty() {
            "full".into()
        } else {
            names.join("+")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub dataset: DatasetKind,
    /// Empty means the single retrieval budget.
    pub budgets: Vec<usize>,
    /// Empty means the one cell described by the ablation flags.
    pub ablate: Vec<Ablation>,
    pub abstention_phrases: Option<Vec<String>>,
    /// LoCoMo integer category to raw type name.
    pub locomo_categories: Option<BTreeMap<String, String>>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Locomo,
            budgets: Vec::new(),
            ablate: Vec::new(),
            abstention_phrases: None,
            locomo_categories: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub gateway: GatewaySection,
    pub embedding: EmbeddingSection,
    pub consolidation: ConsolidationSection,
    pub retrieval: RetrievalSection,
    pub ablation: AblationSection,
    pub eval: EvalSection,
    /// Worker threads; `None` means one per logical core.
    pub parallelism: Option<usize>,
}

impl CliConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let theta = self.consolidation.theta;
        if !(theta.is_finite() && (-1.0..=1.0).contains(&theta)) {
            return Err(CliError::Config(format!("theta {theta} outside [-1, 1]")));
        }
        if self.embedding.dimension == 0 {
            return Err(CliError::Config("embedding dimension must be positive".into()));
        }
        if self.parallelism == Some(0) {
            return Err(CliError::Config("parallelism must be positive".into()));
        }
        if self.consolidation.restarts == 0 || self.consolidation.max_iterations == 0 {
            return Err(CliError::Config(
                "k-means restarts and iterations must be positive".into(),
            ));
        }
        Ok(())
    }

    /// The effective configuration as recorded in manifests and reports.
    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn parallel(&self) -> bool {
        self.parallelism != Some(1)
    }

    pub fn models(&self) -> ModelNames {
        match (&self.gateway.models, self.gateway.small_models) {
            (Some(models), _) => models.clone(),
            (None, true) => ModelNames::small(),
            (None, false) => ModelNames::standard(),
        }
    }

    pub fn build_config(&self) -> BuildConfig {
        let a = self.ablation;
        let c = &self.consolidation;
        BuildConfig {
            extraction: ExtractionConfig {
                use_categories: !a.no_categories,
                use_temporal_reasoning: !a.no_temporal,
                skip_extraction: a.no_step1,
            },
            consolidation: ConsolidationConfig {
                theta: c.theta,
                k_max: c.k_max,
                reasoning_enabled: !a.no_step2,
                kmeans: KMeansConfig {
                    max_iterations: c.max_iterations,
                    restarts: c.restarts,
                    seed: c.seed,
                },
                parallel: self.parallel(),
                ..ConsolidationConfig::default()
            },
        }
    }

    pub fn retrieval_config(&self, budget: usize) -> Result<RetrievalConfig, CliError> {
        Ok(RetrievalConfig::new(self.retrieval.mode, budget)?.with_overfetch(self.retrieval.overfetch)?)
    }

    pub fn bm25_params(&self) -> Bm25Params {
        Bm25Params {
            k1: self.retrieval.bm25_k1,
            b: self.retrieval.bm25_b,
        }
    }

    pub fn abstention(&self) -> AbstentionPatterns {
        match &self.eval.abstention_phrases {
            Some(phrases) => AbstentionPatterns {
                phrases: phrases.clone(),
            },
            None => AbstentionPatterns::default(),
        }
    }

    pub fn locomo_map(&self) -> Result<LocomoCategoryMap, CliError> {
        let Some(raw) = &self.eval.locomo_categories else {
            return Ok(LocomoCategoryMap::default());
        };
        let mut map = BTreeMap::new();
        for (key, name) in raw {
            let code = key
                .parse::<i64>()
                .map_err(|_| CliError::Config(format!("locomo category key {key:?} is not an integer")))?;
            map.insert(code, name.clone());
        }
        Ok(LocomoCategoryMap(map))
    }

    /// `None` when no model backend is configured.
    pub fn gateway(&self) -> Result<Option<Gateway>, CliError> {
        let g = &self.gateway;
        let backend: Box<dyn ChatBackend> = match g.backend {
            GatewayKind::None => return Ok(None),
            GatewayKind::Synthetic => Box::new(SyntheticBackend),
            GatewayKind::Mock => {
                let dir = g
                    .fixtures
                    .as_ref()
                    .ok_or_else(|| CliError::Config("mock gateway needs gateway.fixtures".into()))?;
                Box::new(FixtureBackend::new(dir).map_err(|e| CliError::Config(e.to_string()))?)
            }
            GatewayKind::Http => {
                let url = g
                    .base_url
                    .as_ref()
                    .ok_or_else(|| CliError::Config("http gateway needs gateway.base_url".into()))?;
                Box::new(HttpBackend::new(url.clone(), g.api_key_env.as_deref()))
            }
        };
        let backend: Box<dyn ChatBackend> = match &g.record_fixtures {
            Some(dir) => Box::new(RecordingBackend::new(backend, dir).map_err(|e| CliError::Config(e.to_string()))?),
            None => backend,
        };
        Ok(Some(Gateway::new(backend, self.models(), g.retry_limit)))
    }

    pub fn require_gateway(&self) -> Result<Gateway, CliError> {
        self.gateway()?
            .ok_or_else(|| CliError::Config("no gateway configured (set gateway.backend or --gateway)".into()))
    }

    pub fn embedder(&self) -> Result<Embedder, CliError> {
        let e = &self.embedding;
        let inner: Box<dyn EmbeddingBackend> = match e.backend {
            EmbeddingKind::Hash => Box::new(HashEmbedder::new(e.dimension)),
            EmbeddingKind::TokenHash => Box::new(TokenHashEmbedder::new(e.dimension)),
            EmbeddingKind::Http => {
                let url = e
                    .base_url
                    .as_ref()
                    .ok_or_else(|| CliError::Config("http embedding needs embedding.base_url".into()))?;
                Box::new(HttpEmbedder::new(url, &e.model, e.dimension, e.api_key_env.as_deref()))
            }
        };
        match &e.cache_dir {
            Some(dir) => {
                let cached = Arc::new(CachedEmbedder::persistent(inner, dir)?);
                Ok(Embedder {
                    backend: cached.clone(),
                    cache: Some(cached),
                })
            }
            None => Ok(Embedder {
                backend: Arc::new(inner),
                cache: None,
            }),
        }
    }
}

/// The configured embedding backend, plus its persistent cache if any.
pub struct Embedder {
    pub backend: Arc<dyn EmbeddingBackend>,
    cache: Option<Arc<CachedEmbedder<Box<dyn EmbeddingBackend>>>>,
}

impl Embedder {
    pub fn as_dyn(&self) -> &dyn EmbeddingBackend {
        self.backend.as_ref()
    }

    /// Writes the cache to disk; a no-op without one.
    pub fn flush(&self) -> Result<(), CliError> {
        if let Some(cache) = &self.cache {
            let (hits, misses) = cache.stats();
            log::info!("embedding cache: {hits} hits, {misses} misses");
            cache.save()?;
        }
        Ok(())
    }
}
