//! Per-item records and their per-category aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::dataset::{DatasetKind, UnifiedCategory};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub question_id: String,
    pub conversation_id: String,
    pub category: UnifiedCategory,
    pub raw_type: String,
    pub question: String,
    pub gold_answer: String,
    pub prediction: String,
    /// `None` for adversarial items and judge failures.
    pub llm_judge: Option<u32>,
    pub judge_failure: bool,
    pub bleu1: f64,
    pub rouge1: f64,
    pub rouge_l: f64,
    /// Adversarial items only.
    pub abstained: Option<bool>,
    pub context_tokens: usize,
    pub context_fragments: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricSummary {
    pub count: usize,
    pub judged: usize,
    pub judge_failures: usize,
    pub llm_judge: Option<f64>,
    pub bleu1: Option<f64>,
    pub rouge1: Option<f64>,
    pub rouge_l: Option<f64>,
    pub adversarial_accuracy: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl MetricSummary {
    /// Lexical metrics and the judge mean cover answerable items; accuracy
    /// covers adversarial ones.
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a ItemRecord>) -> Self {
        let all: Vec<&ItemRecord> = records.into_iter().collect();
        let answerable: Vec<&ItemRecord> = all.iter().copied().filter(|r| r.abstained.is_none()).collect();
        let adversarial: Vec<bool> = all.iter().filter_map(|r| r.abstained).collect();
        Self {
            count: all.len(),
            judged: answerable.iter().filter(|r| r.llm_judge.is_some()).count(),
            judge_failures: all.iter().filter(|r| r.judge_failure).count(),
            llm_judge: mean(answerable.iter().filter_map(|r| r.llm_judge).map(f64::from)),
            bleu1: mean(answerable.iter().map(|r| r.bleu1)),
            rouge1: mean(answerable.iter().map(|r| r.rouge1)),
            rouge_l: mean(answerable.iter().map(|r| r.rouge_l)),
            adversarial_accuracy: mean(adversarial.iter().map(|&a| if a { 1.0 } else { 0.0 })),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub dataset: DatasetKind,
    /// Cell name, such as `full@1024` or `no-step2@2048`.
    pub label: String,
    pub config: Value,
    pub categories: BTreeMap<UnifiedCategory, MetricSummary>,
    pub total: MetricSummary,
    /// In dataset order.
    pub items: Vec<ItemRecord>,
}

impl EvalReport {
    pub fn new(dataset: DatasetKind, label: impl Into<String>, config: Value, items: Vec<ItemRecord>) -> Self {
        let mut categories = BTreeMap::new();
        for category in UnifiedCategory::ALL {
            let subset: Vec<&ItemRecord> = items.iter().filter(|r| r.category == category).collect();
            if !subset.is_empty() {
                categories.insert(category, MetricSummary::from_records(subset.iter().copied()));
            }
        }
        let total = MetricSummary::from_records(items.iter());
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            dataset,
            label: label.into(),
            config,
            categories,
            total,
            items,
        }
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("serializable");
        text.push('\n');
        text
    }

    /// Fixed-width summary table. Scores are percentages.
    pub fn to_table(&self) -> String {
        let pct = |v: Option<f64>, scale: f64| v.map_or_else(|| "-".to_string(), |x| format!("{:.2}", x * scale));
        let mut out = String::new();
        writeln!(
            out,
            "{} [{}] (report schema v{})",
            self.label,
            dataset_name(self.dataset),
            self.schema_version
        )
        .unwrap();
        writeln!(
            out,
            "{:<20} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8} {:>9}",
            "category", "n", "LLM", "B1", "R1", "RL", "Acc", "judge_err"
        )
        .unwrap();
        let rows = self
            .categories
            .iter()
            .map(|(c, s)| (c.label().to_string(), s))
            .chain(std::iter::once(("total".to_string(), &self.total)));
        for (name, s) in rows {
            writeln!(
                out,
                "{:<20} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8} {:>9}",
                name,
                s.count,
                pct(s.llm_judge, 1.0),
                pct(s.bleu1, 100.0),
                pct(s.rouge1, 100.0),
                pct(s.rouge_l, 100.0),
                pct(s.adversarial_accuracy, 100.0),
                s.judge_failures
            )
            .unwrap();
        }
        out
    }
}

fn dataset_name(kind: DatasetKind) -> &'static str {
    match kind {
        DatasetKind::Locomo => "locomo",
        DatasetKind::LongMemEval => "longmemeval",
    }
}
