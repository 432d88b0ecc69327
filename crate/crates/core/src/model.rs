//! Conversation and memory data model.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::temporal::TemporalRef;

/// A single conversation turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub message_id: String,
    pub session_index: u32,
    pub date: NaiveDate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weekday: Option<String>,
    pub speaker: String,
    pub text: String,
}

impl Message {
    /// Weekday name, computed from the date when the source gave none.
    pub fn weekday_name(&self) -> String {
        self.weekday
            .clone()
            .unwrap_or_else(|| weekday_name(self.date.weekday()).to_string())
    }
}

pub(crate) fn weekday_name(day: Weekday) -> &'static str {
    match day {
        Weekday::Mon => "Monday",
        Weekday::Tue => "Tuesday",
        Weekday::Wed => "Wednesday",
        Weekday::Thu => "Thursday",
        Weekday::Fri => "Friday",
        Weekday::Sat => "Saturday",
        Weekday::Sun => "Sunday",
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("session {0} has no messages")]
    EmptySession(u32),
    #[error("message {message_id} belongs to session {found}, not {expected}")]
    SessionMismatch {
        message_id: String,
        expected: u32,
        found: u32,
    },
    #[error("duplicate message id {0}")]
    DuplicateMessageId(String),
    #[error("sessions out of order: {previous} then {next}")]
    SessionOrder { previous: u32, next: u32 },
}

/// An ordered, non-empty run of messages sharing one session index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Session {
    session_index: u32,
    messages: Vec<Message>,
}

impl Session {
    pub fn new(session_index: u32, messages: Vec<Message>) -> Result<Self, ModelError> {
        if messages.is_empty() {
            return Err(ModelError::EmptySession(session_index));
        }
        if let Some(bad) = messages.iter().find(|m| m.session_index != session_index) {
            return Err(ModelError::SessionMismatch {
                message_id: bad.message_id.clone(),
                expected: session_index,
                found: bad.session_index,
            });
        }
        Ok(Self {
            session_index,
            messages,
        })
    }

    pub fn session_index(&self) -> u32 {
        self.session_index
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    /// Date of the first message.
    pub fn session_date(&self) -> NaiveDate {
        self.messages[0].date
    }

    pub fn message(&self, message_id: &str) -> Option<&Message> {
        self.messages.iter().find(|m| m.message_id == message_id)
    }
}

impl<'de> Deserialize<'de> for Session {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            session_index: u32,
            messages: Vec<Message>,
        }
        let raw = Raw::deserialize(deserializer)?;
        Session::new(raw.session_index, raw.messages).map_err(serde::de::Error::custom)
    }
}

/// All sessions of one user's history, in strictly increasing session order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Conversation {
    pub conversation_id: String,
    sessions: Vec<Session>,
}

impl Conversation {
    pub fn new(conversation_id: impl Into<String>, sessions: Vec<Session>) -> Result<Self, ModelError> {
        for pair in sessions.windows(2) {
            if pair[0].session_index >= pair[1].session_index {
                return Err(ModelError::SessionOrder {
                    previous: pair[0].session_index,
                    next: pair[1].session_index,
                });
            }
        }
        let mut seen = std::collections::HashSet::new();
        for message in sessions.iter().flat_map(|s| s.messages.iter()) {
            if !seen.insert(message.message_id.as_str()) {
                return Err(ModelError::DuplicateMessageId(message.message_id.clone()));
            }
        }
        Ok(Self {
            conversation_id: conversation_id.into(),
            sessions,
        })
    }

    pub fn sessions(&self) -> &[Session] {
        &self.sessions
    }
}

impl<'de> Deserialize<'de> for Conversation {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            conversation_id: String,
            sessions: Vec<Session>,
        }
        let raw = Raw::deserialize(deserializer)?;
        Conversation::new(raw.conversation_id, raw.sessions).map_err(serde::de::Error::custom)
    }
}

/// Memory category. `Reasoning` is reserved for cross-session insights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Factual,
    Experiential,
    Subjective,
    Reasoning,
}

/// How new information relates to what was already known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceType {
    ExtensionGeneralization,
    Accumulation,
    SpecificationRefinement,
    Transformation,
    ConnectionImplication,
}

impl InferenceType {
    pub const ALL: [InferenceType; 5] = [
        InferenceType::ExtensionGeneralization,
        InferenceType::Accumulation,
        InferenceType::SpecificationRefinement,
        InferenceType::Transformation,
        InferenceType::ConnectionImplication,
    ];

    /// The name as written in the reasoning prompt.
    pub fn label(&self) -> &'static str {
        match self {
            InferenceType::ExtensionGeneralization => "extension/generalization",
            InferenceType::Accumulation => "accumulation",
            InferenceType::SpecificationRefinement => "specification/refinement",
            InferenceType::Transformation => "transformation",
            InferenceType::ConnectionImplication => "connection/implication",
        }
    }
}

impl fmt::Display for InferenceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown inference type {0:?}")]
pub struct UnknownInferenceType(pub String);

impl FromStr for InferenceType {
    type Err = UnknownInferenceType;

    /// Case-insensitive; `/`, `_`, `-` and spaces are interchangeable.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let canon: String = s
            .trim()
            .chars()
            .map(|c| match c {
                '_' | '-' | ' ' => '/',
                c => c.to_ascii_lowercase(),
            })
            .collect();
        InferenceType::ALL
            .into_iter()
            .find(|t| t.label() == canon)
            .ok_or_else(|| UnknownInferenceType(s.to_string()))
    }
}

/// The pool cluster and session cluster whose comparison produced a
/// reasoning fragment.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SourcePair {
    pub pool_cluster: String,
    pub new_cluster: String,
}

/// One unit of stored knowledge: an extracted fragment or a reasoning
/// fragment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryFragment {
    pub fragment_id: String,
    pub key: String,
    pub content: String,
    pub category: Category,
    pub temporal: TemporalRef,
    #[serde(default)]
    pub source_message_ids: Vec<String>,
    pub session_index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inference_type: Option<InferenceType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_pair: Option<SourcePair>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl MemoryFragment {
    pub fn is_reasoned(&self) -> bool {
        self.category == Category::Reasoning
    }

    /// Text that gets embedded and indexed: `key: content`.
    pub fn embedding_text(&self) -> String {
        format!("{}: {}", self.key, self.content)
    }

    /// `[key, time]: content`, the surface form used in reasoning prompts and
    /// answer contexts.
    pub fn render_line(&self) -> String {
        format!("[{}, {}]: {}", self.key, self.temporal, self.content)
    }
}

/// Id for the `ordinal`-th extracted fragment of a session (1-based).
pub fn extracted_id(session_index: u32, ordinal: usize) -> String {
    format!("s{session_index}-m{ordinal}")
}

/// Id for the `ordinal`-th reasoning fragment created in a session (1-based).
pub fn reasoned_id(session_index: u32, ordinal: usize) -> String {
    format!("s{session_index}-r{ordinal}")
}

/// Chronological order with fragment id as the final tie-break.
pub fn chronological(a: &MemoryFragment, b: &MemoryFragment) -> std::cmp::Ordering {
    a.temporal
        .cmp(&b.temporal)
        .then_with(|| a.fragment_id.cmp(&b.fragment_id))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(id: &str, session: u32) -> Message {
        Message {
            message_id: id.into(),
            session_index: session,
            date: NaiveDate::from_ymd_opt(2024, 5, 17).unwrap(),
            weekday: None,
            speaker: "user".into(),
            text: "hello".into(),
        }
    }

    #[test]
    fn weekday_is_derived_from_date() {
        assert_eq!(msg("a", 1).weekday_name(), "Friday");
    }

    #[test]
    fn session_rejects_empty_and_foreign_messages() {
        assert_eq!(Session::new(1, vec![]), Err(ModelError::EmptySession(1)));
        assert!(matches!(
            Session::new(1, vec![msg("a", 1), msg("b", 2)]),
            Err(ModelError::SessionMismatch { .. })
        ));
    }

    #[test]
    fn conversation_checks_order_and_unique_ids() {
        let s1 = Session::new(1, vec![msg("a", 1)]).unwrap();
        let s2 = Session::new(2, vec![msg("a", 2)]).unwrap();
        assert!(matches!(
            Conversation::new("c", vec![s1.clone(), s2]),
            Err(ModelError::DuplicateMessageId(_))
        ));
        let s2 = Session::new(2, vec![msg("b", 2)]).unwrap();
        assert!(matches!(
            Conversation::new("c", vec![s2.clone(), s1.clone()]),
            Err(ModelError::SessionOrder { .. })
        ));
        assert!(Conversation::new("c", vec![s1, s2]).is_ok());
    }

    #[test]
    fn inference_type_names_are_case_insensitive() {
        assert_eq!("Accumulation".parse(), Ok(InferenceType::Accumulation));
        assert_eq!(
            "EXTENSION/GENERALIZATION".parse(),
            Ok(InferenceType::ExtensionGeneralization)
        );
        assert_eq!(
            "connection_implication".parse(),
            Ok(InferenceType::ConnectionImplication)
        );
        assert!("habit".parse::<InferenceType>().is_err());
    }

    #[test]
    fn fragment_ids_follow_session_and_ordinal() {
        assert_eq!(extracted_id(3, 12), "s3-m12");
        assert_eq!(reasoned_id(4, 1), "s4-r1");
    }
}
