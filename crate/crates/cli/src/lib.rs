//! Operator surface for premem: build memory stores from conversation
//! files, query them, and run benchmark sweeps.
//!
//! Settings come from an optional TOML file (`--config`); any flag given
//! on the command line replaces the file's value. The merged configuration
//! is written into every manifest and report.

pub mod commands;
pub mod config;
pub mod error;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use premem::eval::DatasetKind;
use premem::retrieval::RetrievalMode;

pub use commands::{cmd_build, cmd_eval, cmd_query, InputFormat};
pub use config::{Ablation, CliConfig, EmbeddingKind, GatewayKind};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "premem",
    version,
    about = "Build, query and evaluate conversational memory stores"
)]
pub struct Cli {
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract and consolidate conversations into store files.
    Build {
        /// Conversation file.
        input: PathBuf,
        /// native, locomo or longmemeval; defaults to the configured dataset.
        #[arg(long)]
        format: Option<InputFormat>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Retrieve context for a question and answer it.
    Query {
        #[arg(long)]
        store: PathBuf,
        question: String,
        /// Stop after printing the context; no model call.
        #[arg(long)]
        dry_run: bool,
    },
    /// Build, answer and score a benchmark dataset.
    Eval {
        /// Dataset file.
        input: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// Ablation cells to run, such as `full,no-step2`.
        #[arg(long, value_delimiter = ',')]
        ablate: Vec<Ablation>,
        /// Token budgets, such as `1024,2048,4096`.
        #[arg(long, value_delimiter = ',')]
        budget_sweep: Vec<usize>,
    },
}

/// Flags that replace configuration file values.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub gateway: Option<GatewayKind>,
    /// Recorded replies for the mock gateway.
    #[arg(long, global = true)]
    pub fixtures: Option<PathBuf>,
    /// Also write every model reply as a fixture here.
    #[arg(long, global = true)]
    pub record_fixtures: Option<PathBuf>,
    #[arg(long, global = true)]
    pub base_url: Option<String>,
    /// Environment variable that holds the API key.
    #[arg(long, global = true)]
    pub api_key_env: Option<String>,
    /// Smaller extraction and reasoning models.
    #[arg(long, global = true)]
    pub small_models: bool,
    #[arg(long, global = true)]
    pub embedder: Option<EmbeddingKind>,
    #[arg(long, global = true)]
    pub embedding_dim: Option<usize>,
    #[arg(long, global = true)]
    pub embedding_cache: Option<PathBuf>,
    /// Connected-pair similarity threshold.
    #[arg(long, global = true)]
    pub theta: Option<f64>,
    #[arg(long, global = true)]
    pub retriever: Option<RetrievalMode>,
    #[arg(long, global = true)]
    pub budget: Option<usize>,
    #[arg(long, global = true)]
    pub overfetch: Option<usize>,
    #[arg(long, global = true)]
    pub no_step1: bool,
    #[arg(long, global = true)]
    pub no_step2: bool,
    #[arg(long, global = true)]
    pub no_categories: bool,
    #[arg(long, global = true)]
    pub no_temporal: bool,
    #[arg(long, global = true)]
    pub dataset: Option<DatasetKind>,
    /// Worker threads; defaults to one per logical core.
    #[arg(long, short = 'j', global = true)]
    pub parallelism: Option<usize>,
}

impl Overrides {
    /// Loads the configuration file, if any, and applies every given flag.
    pub fn resolve(&self) -> Result<CliConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => CliConfig::load(path)?,
            None => CliConfig::default(),
        };
        self.apply(&mut config);
        config.validate()?;
        Ok(config)
    }

    pub fn apply(&self, config: &mut CliConfig) {
        fn set<T: Clone>(slot: &mut T, value: &Option<T>) {
            if let Some(v) = value {
                *slot = v.clone();
            }
        }
        fn set_opt<T: Clone>(slot: &mut Option<T>, value: &Option<T>) {
            if value.is_some() {
                *slot = value.clone();
            }
        }
        let g = &mut config.gateway;
        set(&mut g.backend, &self.gateway);
        set_opt(&mut g.fixtures, &self.fixtures);
        set_opt(&mut g.record_fixtures, &self.record_fixtures);
        set_opt(&mut g.base_url, &self.base_url);
        set_opt(&mut g.api_key_env, &self.api_key_env);
        g.small_models |= self.small_models;
        let e = &mut config.embedding;
        set(&mut e.backend, &self.embedder);
        set(&mut e.dimension, &self.embedding_dim);
        set_opt(&mut e.cache_dir, &self.embedding_cache);
        set(&mut config.consolidation.theta, &self.theta);
        set(&mut config.retrieval.mode, &self.retriever);
        set(&mut config.retrieval.budget, &self.budget);
        set(&mut config.retrieval.overfetch, &self.overfetch);
        let a = &mut config.ablation;
        a.no_step1 |= self.no_step1;
        a.no_step2 |= self.no_step2;
        a.no_categories |= self.no_categories;
        a.no_temporal |= self.no_temporal;
        set(&mut config.eval.dataset, &self.dataset);
        set_opt(&mut config.parallelism, &self.parallelism);
    }
}

impl std::str::FromStr for GatewayKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(GatewayKind::None),
            "synthetic" => Ok(GatewayKind::Synthetic),
            "mock" => Ok(GatewayKind::Mock),
            "http" => Ok(GatewayKind::Http),
            other => Err(format!(
                "unknown gateway {other:?} (expected none, synthetic, mock or http)"
            )),
        }
    }
}

impl std::str::FromStr for EmbeddingKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hash" => Ok(EmbeddingKind::Hash),
            "token-hash" => Ok(EmbeddingKind::TokenHash),
            "http" => Ok(EmbeddingKind::Http),
            other => Err(format!(
                "unknown embedder {other:?} (expected hash, token-hash or http)"
            )),
        }
    }
}

/// Runs one parsed invocation on a thread pool sized by the configuration.
pub fn run(cli: &Cli, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let mut config = cli.overrides.resolve()?;
    if let Command::Eval {
        ablate, budget_sweep, ..
    } = &cli.command
    {
        if !ablate.is_empty() {
            config.eval.ablate = ablate.clone();
        }
        if !budget_sweep.is_empty() {
            config.eval.budgets = budget_sweep.clone();
        }
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = config.parallelism {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Build {
            input,
            format,
            out: dir,
        } => {
            let format = format.unwrap_or(InputFormat::Dataset(config.eval.dataset));
            cmd_build(&config, input, format, dir, out).map(|_| ())
        }
        Command::Query {
            store,
            question,
            dry_run,
        } => cmd_query(&config, store, question, *dry_run, out).map(|_| ()),
        Command::Eval { input, out: dir, .. } => cmd_eval(&config, input, dir, out).map(|_| ()),
    })
}
