//! Episodic fragment extraction from a single session.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::gateway::{Gateway, GatewayError, Role};
use crate::model::{extracted_id, Category, MemoryFragment, Message, Session};
use crate::prompts::{self, PromptError};
use crate::temporal::{parse_temporal, render_date, TemporalRef};

pub const FACTUAL_KEY: &str = "Factual_Information";
pub const EXPERIENTIAL_KEY: &str = "Experiential_Information";
pub const SUBJECTIVE_KEY: &str = "Subjective_Information";
/// Single list used when categories are disabled.
pub const FLAT_KEY: &str = "Personal_Information";

const CATEGORY_LISTS: [(&str, Category); 3] = [
    (FACTUAL_KEY, Category::Factual),
    (EXPERIENTIAL_KEY, Category::Experiential),
    (SUBJECTIVE_KEY, Category::Subjective),
];

/// Number of leading words used as the key when extraction is skipped.
const RAW_TURN_KEY_WORDS: usize = 5;

/// Ablation switches for the extraction step. All independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionConfig {
    pub use_categories: bool,
    pub use_temporal_reasoning: bool,
    /// Store raw turns instead of calling the model.
    pub skip_extraction: bool,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            use_categories: true,
            use_temporal_reasoning: true,
            skip_extraction: false,
        }
    }
}

impl ExtractionConfig {
    pub fn required_keys(&self) -> Vec<&'static str> {
        if self.use_categories {
            CATEGORY_LISTS.iter().map(|(k, _)| *k).collect()
        } else {
            vec![FLAT_KEY]
        }
    }
}

const GOAL_CATEGORIES: &str = "Categorize each piece of information as Factual, Experiential, or Subjective, and output the results as a single structured JSON object according to the <Final Output JSON Format>.";
const GOAL_FLAT: &str =
    "Output the results as a single structured JSON object according to the <Final Output JSON Format>.";
const IDENTIFY_CATEGORIES: &str = "Identify all specific pieces of information about the user that fall into the Factual, Experiential, or Subjective categories based on the definitions above.";
const IDENTIFY_FLAT: &str = "Identify all specific pieces of information about the user based on the definition above.";
const FORMAT_CATEGORIES: &str = "Format the output as a single JSON object with three categories: \"Factual_Information\", \"Experiential_Information\", and \"Subjective_Information\". Use empty lists ([]) for categories with no information.";
const FORMAT_FLAT: &str = "Format the output as a single JSON object with one list: \"Personal_Information\". Use an empty list ([]) if there is no information.";
const DATE_TEMPORAL: &str = "    * For ongoing facts or current states, use the date of the message
    * For past events with a specific timeframe mentioned (e.g., \"yesterday\", \"three days ago\"), calculate and use the actual date based on the message date
    * For past events mentioned in the conversation, mark as \"Before [message-date]\"
    * For future plans or intentions, mark as \"After [message-date]\"";
const DATE_VERBATIM: &str = "    * Use the date of the message exactly as shown for every piece of information";

/// `[message_id] (YYYY-MM-DD Weekday) text`
pub fn render_message(message: &Message) -> String {
    format!(
        "[{}] ({} {}) {}",
        message.message_id,
        render_date(message.date),
        message.weekday_name(),
        message.text
    )
}

pub fn build_extraction_prompt(session: &Session, config: &ExtractionConfig) -> Result<String, PromptError> {
    let conversation = session
        .messages()
        .iter()
        .map(render_message)
        .collect::<Vec<_>>()
        .join("\n\n");

    let (ongoing, past) = if config.use_temporal_reasoning {
        ("2024-05-17", "Before 2024-05-17")
    } else {
        ("2024-05-17", "2024-05-17")
    };
    let answer_template = if config.use_categories {
        prompts::EXAMPLE_ANSWER_CATEGORIES
    } else {
        prompts::EXAMPLE_ANSWER_FLAT
    };
    let example_answer = prompts::render(answer_template, &[("ongoing_date", ongoing), ("past_date", past)])?;

    let pick = |with: &'static str, without: &'static str| {
        if config.use_categories {
            with
        } else {
            without
        }
    };
    prompts::render(
        prompts::EXTRACTION,
        &[
            ("goal_output", pick(GOAL_CATEGORIES, GOAL_FLAT)),
            (
                "category_definitions",
                pick(prompts::EXTRACTION_CATEGORIES, prompts::EXTRACTION_FLAT),
            ),
            ("identify_instruction", pick(IDENTIFY_CATEGORIES, IDENTIFY_FLAT)),
            (
                "date_instructions",
                if config.use_temporal_reasoning {
                    DATE_TEMPORAL
                } else {
                    DATE_VERBATIM
                },
            ),
            ("format_instruction", pick(FORMAT_CATEGORIES, FORMAT_FLAT)),
            ("example_answer", &example_answer),
            ("conversation", &conversation),
        ],
    )
}

/// Fragments plus everything that was dropped or repaired on the way.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExtractionOutcome {
    pub fragments: Vec<MemoryFragment>,
    pub warnings: Vec<String>,
}

/// Turns a parsed model reply into fragments.
///
/// Entries whose `message_id` is not in the session, or that lack a key or
/// value, are dropped with a warning. Ids are assigned in list order,
/// factual then experiential then subjective.
pub fn parse_extraction(tree: &Value, session: &Session, config: &ExtractionConfig) -> ExtractionOutcome {
    let lists: Vec<(&str, Category)> = if config.use_categories {
        CATEGORY_LISTS.to_vec()
    } else {
        vec![(FLAT_KEY, Category::Factual)]
    };

    let mut outcome = ExtractionOutcome::default();
    for (list_key, category) in lists {
        let entries = match tree.get(list_key) {
            Some(Value::Array(entries)) => entries.as_slice(),
            Some(Value::Null) | None => &[],
            Some(_) => {
                outcome.warnings.push(format!("{list_key} is not a list; ignored"));
                &[]
            }
        };
        for (position, entry) in entries.iter().enumerate() {
            match parse_entry(entry, session, config) {
                Ok((message, key, content, temporal, warning)) => {
                    let ordinal = outcome.fragments.len() + 1;
                    outcome.fragments.push(MemoryFragment {
                        fragment_id: extracted_id(session.session_index(), ordinal),
                        key,
                        content,
                        category,
                        temporal,
                        source_message_ids: vec![message.message_id.clone()],
                        session_index: session.session_index(),
                        inference_type: None,
                        source_pair: None,
                        warnings: warning.into_iter().collect(),
                    });
                }
                Err(reason) => outcome
                    .warnings
                    .push(format!("{list_key}[{position}] dropped: {reason}")),
            }
        }
    }
    if outcome.fragments.is_empty() {
        outcome
            .warnings
            .push(format!("session {} produced no fragments", session.session_index()));
    }
    outcome
}

type ParsedEntry<'s> = (&'s Message, String, String, TemporalRef, Option<String>);

fn parse_entry<'s>(entry: &Value, session: &'s Session, config: &ExtractionConfig) -> Result<ParsedEntry<'s>, String> {
    let text_field = |names: &[&str]| {
        names
            .iter()
            .find_map(|n| entry.get(*n).and_then(Value::as_str))
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
    };
    let raw_id = text_field(&["message_id"]).ok_or("missing message_id")?;
    let message_id = raw_id.trim_start_matches('[').trim_end_matches(']');
    let message = session
        .message(message_id)
        .ok_or_else(|| format!("unknown message_id {message_id:?}"))?;
    let key = text_field(&["key"]).ok_or("missing key")?;
    let content = text_field(&["value", "content"]).ok_or("missing value")?;

    if !config.use_temporal_reasoning {
        return Ok((message, key, content, TemporalRef::OnDate(message.date), None));
    }
    match text_field(&["date"]) {
        Some(date) => {
            let parsed = parse_temporal(&date, message.date);
            Ok((message, key, content, parsed.value, parsed.warning))
        }
        None => Ok((
            message,
            key,
            content,
            TemporalRef::OnDate(message.date),
            Some("missing date; using message date".into()),
        )),
    }
}

/// One fragment per raw turn, used when extraction is ablated.
pub fn raw_turn_fragments(session: &Session) -> Vec<MemoryFragment> {
    session
        .messages()
        .iter()
        .enumerate()
        .map(|(i, message)| MemoryFragment {
            fragment_id: extracted_id(session.session_index(), i + 1),
            key: message
                .text
                .split_whitespace()
                .take(RAW_TURN_KEY_WORDS)
                .collect::<Vec<_>>()
                .join(" "),
            content: message.text.clone(),
            category: Category::Factual,
            temporal: TemporalRef::OnDate(message.date),
            source_message_ids: vec![message.message_id.clone()],
            session_index: session.session_index(),
            inference_type: None,
            source_pair: None,
            warnings: Vec::new(),
        })
        .filter(|f| !f.key.is_empty())
        .collect()
}

#[derive(Debug, thiserror::Error)]
pub enum ExtractionError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

pub fn extract_session(
    session: &Session,
    gateway: &Gateway,
    config: &ExtractionConfig,
) -> Result<ExtractionOutcome, ExtractionError> {
    if config.skip_extraction {
        return Ok(ExtractionOutcome {
            fragments: raw_turn_fragments(session),
            warnings: Vec::new(),
        });
    }
    let prompt = build_extraction_prompt(session, config)?;
    let request = gateway.request(Role::Extract, prompt);
    let tree = gateway.complete_structured(&request, &config.required_keys())?;
    let outcome = parse_extraction(&tree, session, config);
    for warning in &outcome.warnings {
        log::warn!("extraction s{}: {warning}", session.session_index());
    }
    Ok(outcome)
}
