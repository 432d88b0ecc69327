//! LLM-as-a-judge scoring and abstention detection.

use serde::{Deserialize, Serialize};

use crate::gateway::{Gateway, GatewayError, Role};
use crate::prompts;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeOutcome {
    Score(u32),
    /// No integer in either reply.
    Failure {
        raw: String,
    },
}

impl JudgeOutcome {
    pub fn score(&self) -> Option<u32> {
        match self {
            JudgeOutcome::Score(s) => Some(*s),
            JudgeOutcome::Failure { .. } => None,
        }
    }
}

pub fn build_judge_prompt(question: &str, gold: &str, prediction: &str) -> String {
    prompts::render(
        prompts::JUDGE,
        &[
            ("question", question),
            ("gold_answer", gold),
            ("predicted_answer", prediction),
        ],
    )
    .expect("judge template uses only its three variables")
}

/// First (optionally signed) integer in `reply`, clamped to `[0, 100]`.
pub fn parse_score(reply: &str) -> Option<u32> {
    let bytes = reply.as_bytes();
    let start = bytes.iter().position(u8::is_ascii_digit)?;
    let end = bytes[start..]
        .iter()
        .position(|b| !b.is_ascii_digit())
        .map_or(bytes.len(), |n| start + n);
    let negative = start > 0 && bytes[start - 1] == b'-';
    if negative {
        return Some(0);
    }
    let digits = reply[start..end].trim_start_matches('0');
    if digits.len() > 3 {
        return Some(100);
    }
    Some(digits.parse::<u32>().unwrap_or(0).min(100))
}

/// Scores `prediction`, asking a second time if the first reply holds no
/// integer.
pub fn judge(question: &str, gold: &str, prediction: &str, gateway: &Gateway) -> Result<JudgeOutcome, GatewayError> {
    let request = gateway.request(Role::Judge, build_judge_prompt(question, gold, prediction));
    let mut raw = String::new();
    for _ in 0..2 {
        raw = gateway.complete(&request)?;
        if let Some(score) = parse_score(&raw) {
            return Ok(JudgeOutcome::Score(score));
        }
    }
    log::warn!("judge reply unparseable twice: {raw:?}");
    Ok(JudgeOutcome::Failure { raw })
}

/// Phrases that mark a prediction as a safe refusal. Matching is
/// case-insensitive containment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstentionPatterns {
    pub phrases: Vec<String>,
}

impl Default for AbstentionPatterns {
    fn default() -> Self {
        let phrases = [
            "not mentioned",
            "no mention",
            "never mentioned",
            "not discussed",
            "no information",
            "not enough information",
            "insufficient information",
            "information is not available",
            "not provided",
            "not specified",
            "cannot be determined",
            "can't be determined",
            "cannot determine",
            "unknown",
            "unanswerable",
            "i don't know",
            "not answerable",
        ];
        Self {
            phrases: phrases.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl AbstentionPatterns {
    pub fn abstains(&self, prediction: &str) -> bool {
        let lower = prediction.to_lowercase().replace('’', "'");
        self.phrases.iter().any(|p| lower.contains(&p.to_lowercase()))
    }
}

/// Fraction of predictions that abstain; 0 for an empty list.
pub fn adversarial_accuracy<S: AsRef<str>>(predictions: &[S], patterns: &AbstentionPatterns) -> f64 {
    if predictions.is_empty() {
        return 0.0;
    }
    let safe = predictions.iter().filter(|p| patterns.abstains(p.as_ref())).count();
    safe as f64 / predictions.len() as f64
}
