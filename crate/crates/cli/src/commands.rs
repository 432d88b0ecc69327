//! The three operator commands. Each writes its human-readable output to
//! the given writer and its artifacts under the given paths.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use premem::eval::{build_stores, evaluate, load_dataset, Dataset, DatasetKind, EvalOptions};
use premem::memory::MemoryStore;
use premem::model::Conversation;
use premem::pipeline::build_memory;
use premem::retrieval::{answer, assemble_context, retrieve, RetrievalMode};
use premem::store::{load_store, save_store, ManifestEvent, RunManifest};

use crate::config::{Ablation, CliConfig};
use crate::error::{io_error, CliError};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const STORE_SUFFIX: &str = ".store.jsonl";

/// Layout of a conversation input file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    /// One conversation object or an array of them.
    Native,
    Dataset(DatasetKind),
}

impl std::str::FromStr for InputFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("native") {
            Ok(InputFormat::Native)
        } else {
            s.parse().map(InputFormat::Dataset)
        }
    }
}

/// File name for one conversation's store; characters outside
/// `[A-Za-z0-9._-]` become `_`.
pub fn store_file_name(conversation_id: &str) -> String {
    let safe: String = conversation_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "._-".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{safe}{STORE_SUFFIX}")
}

pub fn load_conversations(path: &Path, format: InputFormat, config: &CliConfig) -> Result<Vec<Conversation>, CliError> {
    match format {
        InputFormat::Native => {
            let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            let value: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            let parsed = if value.is_array() {
                serde_json::from_value::<Vec<Conversation>>(value)
            } else {
                serde_json::from_value::<Conversation>(value).map(|c| vec![c])
            };
            parsed.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
        }
        InputFormat::Dataset(kind) => Ok(load_dataset(kind, path, &config.locomo_map()?)?.conversations),
    }
}

fn write_manifest(path: &Path, config: serde_json::Value, events: &[ManifestEvent]) -> Result<(), CliError> {
    let mut manifest = RunManifest::create(path, config)?;
    for event in events {
        manifest.append(event)?;
    }
    manifest.finish()?;
    Ok(())
}

fn say(out: &mut dyn Write, text: std::fmt::Arguments<'_>) -> Result<(), CliError> {
    out.write_fmt(text)
        .map_err(|e| CliError::Internal(format!("writing output: {e}")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildSummary {
    pub stores: Vec<PathBuf>,
    pub manifest: PathBuf,
}

/// Extracts and consolidates every conversation in `input`, writing one
/// store per conversation and a single manifest into `out_dir`.
pub fn cmd_build(
    config: &CliConfig,
    input: &Path,
    format: InputFormat,
    out_dir: &Path,
    out: &mut dyn Write,
) -> Result<BuildSummary, CliError> {
    config.validate()?;
    let conversations = load_conversations(input, format, config)?;
    let gateway = config.require_gateway()?;
    let embedder = config.embedder()?;
    let build = config.build_config();

    let mut stores = Vec::new();
    let mut events = Vec::new();
    for conversation in &conversations {
        let output = build_memory(conversation, &build, &gateway, embedder.as_dyn())?;
        let path = out_dir.join(store_file_name(&conversation.conversation_id));
        save_store(&output.store, &path)?;
        say(
            out,
            format_args!(
                "{}: {} memory + {} reasoning fragments -> {}\n",
                conversation.conversation_id,
                output.store.memory().len(),
                output.store.reasoning().len(),
                path.display()
            ),
        )?;
        stores.push(path);
        events.extend(output.events);
    }
    let manifest = out_dir.join(MANIFEST_FILE);
    write_manifest(&manifest, config.to_value(), &events)?;
    embedder.flush()?;
    Ok(BuildSummary { stores, manifest })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    /// Included fragments with their retrieval scores, in rank order.
    pub hits: Vec<(String, f64)>,
    pub context: String,
    pub token_count: usize,
    /// `None` on a dry run.
    pub answer: Option<String>,
}

/// Retrieves, assembles and (unless `dry_run`) answers one question.
pub fn cmd_query(
    config: &CliConfig,
    store_path: &Path,
    question: &str,
    dry_run: bool,
    out: &mut dyn Write,
) -> Result<QueryOutcome, CliError> {
    config.validate()?;
    let mut store = load_store(store_path)?;
    store.set_bm25_params(config.bm25_params());
    let retrieval = config.retrieval_config(config.retrieval.budget)?;

    let embedder = match retrieval.mode() {
        RetrievalMode::Bm25 => None,
        RetrievalMode::Dense => {
            let embedder = config.embedder()?;
            check_embedder(&store, embedder.as_dyn())?;
            Some(embedder)
        }
    };
    let ranked = retrieve(question, &store, &retrieval, embedder.as_ref().map(|e| e.as_dyn()))?;
    let context = assemble_context(&ranked, &store, &retrieval);
    let hits: Vec<(String, f64)> = ranked
        .iter()
        .filter(|(id, _)| context.included_fragment_ids.contains(id))
        .cloned()
        .collect();

    say(
        out,
        format_args!(
            "retriever {} | budget {} | {} candidates\n",
            retrieval.mode(),
            retrieval.token_budget(),
            ranked.len()
        ),
    )?;
    for (rank, (id, score)) in hits.iter().enumerate() {
        say(out, format_args!("{:>4}  {:<12} {:.6}\n", rank + 1, id, score))?;
    }
    let text = context.text();
    say(out, format_args!("--- context ---\n{text}\n--- end context ---\n"))?;
    say(
        out,
        format_args!(
            "tokens: {} / {} ({} fragments)\n",
            context.token_count,
            context.token_budget,
            context.lines.len()
        ),
    )?;
    for warning in &context.warnings {
        say(out, format_args!("warning: {warning}\n"))?;
    }

    let reply = if dry_run {
        None
    } else {
        let gateway = config.require_gateway()?;
        let style = config.eval.dataset.style();
        let reply = answer(question, &context, &gateway, style)?;
        say(out, format_args!("answer: {reply}\n"))?;
        Some(reply)
    };
    if let Some(e) = &embedder {
        e.flush()?;
    }
    Ok(QueryOutcome {
        hits,
        context: text,
        token_count: context.token_count,
        answer: reply,
    })
}

fn check_embedder(store: &MemoryStore, embedder: &dyn premem::vector::EmbeddingBackend) -> Result<(), CliError> {
    if store.embedding_backend() != embedder.backend_id() || store.dimension() != embedder.dimension() {
        return Err(CliError::Config(format!(
            "store was embedded with {} (dimension {}) but the configured embedder is {} (dimension {})",
            store.embedding_backend(),
            store.dimension(),
            embedder.backend_id(),
            embedder.dimension()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalCell {
    pub label: String,
    pub report_json: PathBuf,
    pub report_table: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub cells: Vec<EvalCell>,
    /// One per ablation, beside that ablation's stores.
    pub manifests: Vec<PathBuf>,
}

/// Ablation cells in run order: explicit ones, or the flag-described cell.
fn eval_cells(config: &CliConfig) -> Vec<(String, CliConfig)> {
    if config.eval.ablate.is_empty() {
        return vec![(config.ablation.label(), config.clone())];
    }
    let mut seen = Vec::<Ablation>::new();
    let mut cells = Vec::new();
    for ablation in &config.eval.ablate {
        if seen.contains(ablation) {
            continue;
        }
        seen.push(*ablation);
        let mut cell = config.clone();
        cell.ablation = ablation.flags();
        cell.eval.ablate = Vec::new();
        cells.push((ablation.name().to_string(), cell));
    }
    cells
}

/// Builds stores once per ablation and evaluates them at every budget.
///
/// Layout under `out_dir`: `<ablation>/` holds stores and the manifest,
/// `<ablation>@<budget>.json` and `.txt` hold each report.
pub fn cmd_eval(
    config: &CliConfig,
    input: &Path,
    out_dir: &Path,
    out: &mut dyn Write,
) -> Result<EvalSummary, CliError> {
    config.validate()?;
    let dataset: Dataset = load_dataset(config.eval.dataset, input, &config.locomo_map()?)?;
    let gateway = config.require_gateway()?;
    let embedder = config.embedder()?;
    let budgets = if config.eval.budgets.is_empty() {
        vec![config.retrieval.budget]
    } else {
        config.eval.budgets.clone()
    };
    for &budget in &budgets {
        config.retrieval_config(budget)?;
    }

    std::fs::create_dir_all(out_dir).map_err(|e| io_error(out_dir, e))?;
    let mut summary = EvalSummary {
        cells: Vec::new(),
        manifests: Vec::new(),
    };
    for (name, cell) in eval_cells(config) {
        let outputs = build_stores(
            &dataset,
            &cell.build_config(),
            &gateway,
            embedder.as_dyn(),
            cell.parallel(),
        )?;
        let cell_dir = out_dir.join(&name);
        let mut events = Vec::new();
        let mut stores = BTreeMap::new();
        for output in outputs {
            let mut store = output.store;
            save_store(&store, &cell_dir.join(store_file_name(store.conversation_id())))?;
            store.set_bm25_params(cell.bm25_params());
            events.extend(output.events);
            stores.insert(store.conversation_id().to_string(), store);
        }
        let manifest = cell_dir.join(MANIFEST_FILE);
        write_manifest(&manifest, cell.to_value(), &events)?;
        summary.manifests.push(manifest);

        for &budget in &budgets {
            let mut effective = cell.clone();
            effective.retrieval.budget = budget;
            effective.eval.budgets = Vec::new();
            let label = format!("{name}@{budget}");
            let options = EvalOptions {
                retrieval: effective.retrieval_config(budget)?,
                abstention: effective.abstention(),
                label: label.clone(),
                config: effective.to_value(),
                parallel: effective.parallel(),
            };
            let report = evaluate(&dataset, &stores, &options, &gateway, embedder.as_dyn())?;
            let report_json = out_dir.join(format!("{label}.json"));
            let report_table = out_dir.join(format!("{label}.txt"));
            let table = report.to_table();
            std::fs::write(&report_json, report.to_json()).map_err(|e| io_error(&report_json, e))?;
            std::fs::write(&report_table, &table).map_err(|e| io_error(&report_table, e))?;
            say(out, format_args!("{table}\n"))?;
            summary.cells.push(EvalCell {
                label,
                report_json,
                report_table,
            });
        }
    }
    embedder.flush()?;
    Ok(summary)
}
