//! Benchmark loaders and question-type unification.
//!
//! LoCoMo layout: a list of samples, each with `sample_id`, a
//! `conversation` object holding `session_<n>` turn lists and
//! `session_<n>_date_time` strings such as `"1:56 pm on 8 May, 2023"`, and a
//! `qa` list whose `category` is an integer code.
//!
//! LongMemEval layout: a list of questions, each carrying its own haystack
//! (`haystack_sessions`, `haystack_dates` like `"2023/05/20 (Sat) 02:21"`,
//! `haystack_session_ids`) plus `question_id`, `question_type`, `question`
//! and `answer`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::model::{Conversation, Message, ModelError, Session};
use crate::retrieval::DatasetStyle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnifiedCategory {
    SingleHop,
    MultiHop,
    TemporalReasoning,
    Adversarial,
    KnowledgeUpdate,
}

impl UnifiedCategory {
    pub const ALL: [UnifiedCategory; 5] = [
        UnifiedCategory::SingleHop,
        UnifiedCategory::MultiHop,
        UnifiedCategory::TemporalReasoning,
        UnifiedCategory::Adversarial,
        UnifiedCategory::KnowledgeUpdate,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            UnifiedCategory::SingleHop => "single-hop",
            UnifiedCategory::MultiHop => "multi-hop",
            UnifiedCategory::TemporalReasoning => "temporal-reasoning",
            UnifiedCategory::Adversarial => "adversarial",
            UnifiedCategory::KnowledgeUpdate => "knowledge-update",
        }
    }
}

impl fmt::Display for UnifiedCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Locomo,
    LongMemEval,
}

impl DatasetKind {
    pub fn style(&self) -> DatasetStyle {
        match self {
            DatasetKind::Locomo => DatasetStyle::Locomo,
            DatasetKind::LongMemEval => DatasetStyle::LongMemEval,
        }
    }
}

impl FromStr for DatasetKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "locomo" => Ok(DatasetKind::Locomo),
            "longmemeval" => Ok(DatasetKind::LongMemEval),
            other => Err(format!("unknown dataset {other:?} (expected locomo or longmemeval)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("cannot map {dataset:?} question type {raw_type:?} (question {question_id})")]
pub struct UnmappableType {
    pub dataset: DatasetKind,
    pub raw_type: String,
    pub question_id: String,
}

fn normalize(raw: &str) -> String {
    raw.trim()
        .to_ascii_lowercase()
        .chars()
        .map(|c| if c == '_' || c == ' ' { '-' } else { c })
        .collect()
}

/// Maps a raw question type onto the five shared categories.
///
/// LoCoMo folds open-domain questions into single-hop and keeps the rest.
/// LongMemEval checks the `_abs` suffix first, then "single", then
/// knowledge updates, and finally rewrites "session" as "hop".
pub fn unify_category(
    dataset: DatasetKind,
    raw_type: &str,
    question_id: &str,
) -> Result<UnifiedCategory, UnmappableType> {
    let raw = normalize(raw_type);
    let mapped = match dataset {
        DatasetKind::Locomo => match raw.as_str() {
            "open-domain-knowledge" | "open-domain" | "single-hop" => Some(UnifiedCategory::SingleHop),
            "multi-hop" => Some(UnifiedCategory::MultiHop),
            "temporal-reasoning" | "temporal" => Some(UnifiedCategory::TemporalReasoning),
            "adversarial" => Some(UnifiedCategory::Adversarial),
            _ => None,
        },
        DatasetKind::LongMemEval => {
            if question_id.ends_with("_abs") {
                Some(UnifiedCategory::Adversarial)
            } else if raw.contains("single") {
                Some(UnifiedCategory::SingleHop)
            } else if raw.starts_with("knowledge") {
                Some(UnifiedCategory::KnowledgeUpdate)
            } else {
                match raw.replace("session", "hop").as_str() {
                    "multi-hop" => Some(UnifiedCategory::MultiHop),
                    "temporal-reasoning" => Some(UnifiedCategory::TemporalReasoning),
                    _ => None,
                }
            }
        }
    };
    mapped.ok_or_else(|| UnmappableType {
        dataset,
        raw_type: raw_type.to_string(),
        question_id: question_id.to_string(),
    })
}

/// LoCoMo integer category codes and their names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocomoCategoryMap(pub BTreeMap<i64, String>);

impl Default for LocomoCategoryMap {
    fn default() -> Self {
        Self(BTreeMap::from([
            (1, "open-domain-knowledge".to_string()),
            (2, "multi-hop".to_string()),
            (3, "temporal-reasoning".to_string()),
            (4, "single-hop".to_string()),
            (5, "adversarial".to_string()),
        ]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaItem {
    pub question_id: String,
    pub conversation_id: String,
    pub question: String,
    pub gold_answer: String,
    pub raw_type: String,
    pub category: UnifiedCategory,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub conversations: Vec<Conversation>,
    pub items: Vec<QaItem>,
}

impl Dataset {
    pub fn category_counts(&self) -> BTreeMap<UnifiedCategory, usize> {
        let mut counts = BTreeMap::new();
        for item in &self.items {
            *counts.entry(item.category).or_insert(0) += 1;
        }
        counts
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{location}: invalid JSON: {message}")]
    Json { location: String, message: String },
    #[error("{location}: {message}")]
    Malformed { location: String, message: String },
    #[error(transparent)]
    Category(#[from] UnmappableType),
    #[error("{location}: {source}")]
    Model {
        location: String,
        #[source]
        source: ModelError,
    },
}

fn malformed(location: impl Into<String>, message: impl Into<String>) -> DatasetError {
    DatasetError::Malformed {
        location: location.into(),
        message: message.into(),
    }
}

fn scalar_text(value: Option<&Value>) -> Option<String> {
    match value? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Array(items) => Some(
            items
                .iter()
                .filter_map(|v| scalar_text(Some(v)))
                .collect::<Vec<_>>()
                .join(", "),
        ),
        _ => None,
    }
}

pub fn load_dataset(kind: DatasetKind, path: &Path, locomo_map: &LocomoCategoryMap) -> Result<Dataset, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path.display().to_string();
    match kind {
        DatasetKind::Locomo => parse_locomo(&text, &name, locomo_map),
        DatasetKind::LongMemEval => parse_longmemeval(&text, &name),
    }
}

fn parse_root(text: &str, name: &str) -> Result<Vec<Value>, DatasetError> {
    let root: Value = serde_json::from_str(text).map_err(|e| DatasetError::Json {
        location: format!("{name}:{}:{}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    match root {
        Value::Array(items) => Ok(items),
        _ => Err(malformed(name, "top level must be a list")),
    }
}

/// `"1:56 pm on 8 May, 2023"` → 2023-05-08.
pub fn parse_locomo_date(text: &str) -> Option<NaiveDate> {
    let day_part = text.rsplit_once(" on ").map_or(text, |(_, d)| d).trim();
    ["%d %B, %Y", "%d %b, %Y", "%d %B %Y", "%Y-%m-%d"]
        .iter()
        .find_map(|f| NaiveDate::parse_from_str(day_part, f).ok())
}

pub fn parse_locomo(text: &str, name: &str, map: &LocomoCategoryMap) -> Result<Dataset, DatasetError> {
    let mut conversations = Vec::new();
    let mut items = Vec::new();
    for (s, sample) in parse_root(text, name)?.iter().enumerate() {
        let here = format!("{name}[{s}]");
        let conversation_id = scalar_text(sample.get("sample_id")).unwrap_or_else(|| format!("sample-{s}"));
        let body = sample
            .get("conversation")
            .and_then(Value::as_object)
            .ok_or_else(|| malformed(&here, "missing conversation object"))?;

        let mut numbered: Vec<(u32, &Vec<Value>)> = body
            .iter()
            .filter_map(|(k, v)| {
                let n = k.strip_prefix("session_")?.parse::<u32>().ok()?;
                Some((n, v.as_array()?))
            })
            .collect();
        numbered.sort_by_key(|(n, _)| *n);

        let mut sessions = Vec::new();
        for (n, turns) in numbered {
            if turns.is_empty() {
                continue;
            }
            let date_key = format!("session_{n}_date_time");
            let date_text = body
                .get(&date_key)
                .and_then(Value::as_str)
                .ok_or_else(|| malformed(format!("{here}.conversation"), format!("missing {date_key}")))?;
            let date = parse_locomo_date(date_text).ok_or_else(|| {
                malformed(
                    format!("{here}.conversation.{date_key}"),
                    format!("unparseable date {date_text:?}"),
                )
            })?;
            let mut messages = Vec::new();
            for (t, turn) in turns.iter().enumerate() {
                let at = format!("{here}.conversation.session_{n}[{t}]");
                let speaker = scalar_text(turn.get("speaker")).ok_or_else(|| malformed(&at, "missing speaker"))?;
                let said = scalar_text(turn.get("text")).ok_or_else(|| malformed(&at, "missing text"))?;
                let message_id = scalar_text(turn.get("dia_id")).unwrap_or_else(|| format!("D{n}:{}", t + 1));
                let mut text = format!("{speaker}: {said}");
                if let Some(caption) = scalar_text(turn.get("blip_caption")) {
                    text.push_str(&format!(" [shares a photo of {caption}]"));
                }
                messages.push(Message {
                    message_id,
                    session_index: n,
                    date,
                    weekday: None,
                    speaker,
                    text,
                });
            }
            sessions.push(Session::new(n, messages).map_err(|source| DatasetError::Model {
                location: format!("{here}.conversation.session_{n}"),
                source,
            })?);
        }
        conversations.push(Conversation::new(conversation_id.clone(), sessions).map_err(|source| {
            DatasetError::Model {
                location: here.clone(),
                source,
            }
        })?);

        let qa = sample
            .get("qa")
            .and_then(Value::as_array)
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        for (q, entry) in qa.iter().enumerate() {
            let at = format!("{here}.qa[{q}]");
            let question_id = format!("{conversation_id}-q{}", q + 1);
            let code = entry
                .get("category")
                .and_then(Value::as_i64)
                .ok_or_else(|| malformed(&at, "missing integer category"))?;
            let raw_type = map
                .0
                .get(&code)
                .cloned()
                .ok_or_else(|| malformed(&at, format!("category code {code} not in the category map")))?;
            let category = unify_category(DatasetKind::Locomo, &raw_type, &question_id)?;
            items.push(QaItem {
                question_id,
                conversation_id: conversation_id.clone(),
                question: scalar_text(entry.get("question")).ok_or_else(|| malformed(&at, "missing question"))?,
                gold_answer: scalar_text(entry.get("answer")).unwrap_or_default(),
                raw_type,
                category,
            });
        }
    }
    Ok(Dataset {
        kind: DatasetKind::Locomo,
        conversations,
        items,
    })
}

/// `"2023/05/20 (Sat) 02:21"` → 2023-05-20.
pub fn parse_longmemeval_date(text: &str) -> Option<NaiveDate> {
    let head = text.split_whitespace().next()?;
    NaiveDate::parse_from_str(head, "%Y/%m/%d")
        .or_else(|_| NaiveDate::parse_from_str(head, "%Y-%m-%d"))
        .ok()
}

/// Every question becomes its own conversation. Haystack sessions are
/// ordered by date (stable for equal dates) and numbered from 1.
pub fn parse_longmemeval(text: &str, name: &str) -> Result<Dataset, DatasetError> {
    let mut conversations = Vec::new();
    let mut items = Vec::new();
    for (q, entry) in parse_root(text, name)?.iter().enumerate() {
        let here = format!("{name}[{q}]");
        let question_id =
            scalar_text(entry.get("question_id")).ok_or_else(|| malformed(&here, "missing question_id"))?;
        let raw_type =
            scalar_text(entry.get("question_type")).ok_or_else(|| malformed(&here, "missing question_type"))?;
        let category = unify_category(DatasetKind::LongMemEval, &raw_type, &question_id)?;
        let haystack = entry
            .get("haystack_sessions")
            .and_then(Value::as_array)
            .ok_or_else(|| malformed(&here, "missing haystack_sessions"))?;
        let dates = entry
            .get("haystack_dates")
            .and_then(Value::as_array)
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        let ids = entry
            .get("haystack_session_ids")
            .and_then(Value::as_array)
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        if dates.len() != haystack.len() {
            return Err(malformed(
                &here,
                format!("{} sessions but {} dates", haystack.len(), dates.len()),
            ));
        }
        let mut dated = Vec::new();
        for (h, turns) in haystack.iter().enumerate() {
            let date_text = dates[h].as_str().unwrap_or_default();
            let date = parse_longmemeval_date(date_text).ok_or_else(|| {
                malformed(
                    format!("{here}.haystack_dates[{h}]"),
                    format!("unparseable date {date_text:?}"),
                )
            })?;
            let session_id = scalar_text(ids.get(h)).unwrap_or_else(|| format!("h{h}"));
            let turns = turns
                .as_array()
                .ok_or_else(|| malformed(format!("{here}.haystack_sessions[{h}]"), "session is not a list"))?;
            if !turns.is_empty() {
                dated.push((date, h, session_id, turns));
            }
        }
        dated.sort_by_key(|(date, h, _, _)| (*date, *h));

        let mut sessions = Vec::new();
        for (ordinal, (date, h, session_id, turns)) in dated.into_iter().enumerate() {
            let session_index = ordinal as u32 + 1;
            let mut messages = Vec::new();
            for (t, turn) in turns.iter().enumerate() {
                let at = format!("{here}.haystack_sessions[{h}][{t}]");
                let role = scalar_text(turn.get("role")).ok_or_else(|| malformed(&at, "missing role"))?;
                let content = scalar_text(turn.get("content")).ok_or_else(|| malformed(&at, "missing content"))?;
                messages.push(Message {
                    message_id: format!("{session_id}:{}", t + 1),
                    session_index,
                    date,
                    weekday: None,
                    text: format!("{role}: {content}"),
                    speaker: role,
                });
            }
            sessions.push(
                Session::new(session_index, messages).map_err(|source| DatasetError::Model {
                    location: format!("{here}.haystack_sessions[{h}]"),
                    source,
                })?,
            );
        }
        conversations.push(
            Conversation::new(question_id.clone(), sessions).map_err(|source| DatasetError::Model {
                location: here.clone(),
                source,
            })?,
        );
        items.push(QaItem {
            conversation_id: question_id.clone(),
            question: scalar_text(entry.get("question")).ok_or_else(|| malformed(&here, "missing question"))?,
            gold_answer: scalar_text(entry.get("answer")).unwrap_or_default(),
            question_id,
            raw_type,
            category,
        });
    }
    Ok(Dataset {
        kind: DatasetKind::LongMemEval,
        conversations,
        items,
    })
}
