//! The single boundary to language-model calls.
//!
//! Every model interaction goes through [`Gateway`], which pairs a
//! [`ChatBackend`] with per-role model names, a retry policy and an
//! append-only call log. Three backends ship with the crate:
//!
//! - [`HttpBackend`]: any OpenAI-compatible chat-completion endpoint.
//! - [`FixtureBackend`]: replays replies stored on disk, keyed by a content
//!   hash of the request. Used by golden tests.
//! - [`SyntheticBackend`]: a rule-based offline responder that produces
//!   well-formed replies for every prompt this crate renders. Handy for
//!   demos and for recording fixtures.

mod http;
mod mock;
mod synthetic;

use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use http::HttpBackend;
pub use mock::{fixture_key, FixtureBackend, RecordingBackend};
pub use synthetic::SyntheticBackend;

/// Appended to the prompt when a structured reply failed to parse.
pub const JSON_REPAIR_INSTRUCTION: &str = "\n\nReturn valid JSON only.";

/// Which pipeline stage a call serves. Decides model name and temperature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Extract,
    Reason,
    Response,
    Judge,
}

impl Role {
    pub fn temperature(&self) -> f64 {
        match self {
            Role::Extract | Role::Reason => 0.0,
            Role::Response => 0.7,
            Role::Judge => 0.0,
        }
    }

    pub fn max_output_tokens(&self) -> u32 {
        match self {
            Role::Extract | Role::Reason => 4096,
            Role::Response => 256,
            Role::Judge => 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_prompt: Option<String>,
    pub user_prompt: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

/// Model names per role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelNames {
    pub extract: String,
    pub reason: String,
    pub response: String,
    pub judge: String,
}

impl ModelNames {
    /// Full-size construction models.
    pub fn standard() -> Self {
        Self {
            extract: "gpt-4.1".into(),
            reason: "gpt-4.1".into(),
            response: "gpt-4.1-mini".into(),
            judge: "gpt-4.1-mini".into(),
        }
    }

    /// Low-spec construction: smaller extraction and reasoning models, the
    /// response and judge models unchanged.
    pub fn small() -> Self {
        Self {
            extract: "gpt-4.1-nano".into(),
            reason: "gpt-4.1-nano".into(),
            ..Self::standard()
        }
    }

    pub fn for_role(&self, role: Role) -> &str {
        match role {
            Role::Extract => &self.extract,
            Role::Reason => &self.reason,
            Role::Response => &self.response,
            Role::Judge => &self.judge,
        }
    }
}

impl Default for ModelNames {
    fn default() -> Self {
        Self::standard()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("gateway unavailable after {attempts} attempt(s): {message}")]
    Unavailable { attempts: u32, message: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("no fixture for request {key} in {dir}")]
    FixtureMissing { key: String, dir: String },
    #[error("structured output still invalid after {attempts} attempt(s): {reason}")]
    StructuredOutput { attempts: u32, reason: String, raw: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("fixture i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Anything that can turn a completion request into text.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError>;

    /// Short identifier recorded in manifests.
    fn backend_id(&self) -> String;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        (**self).complete(request)
    }
    fn backend_id(&self) -> String {
        (**self).backend_id()
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        (**self).complete(request)
    }
    fn backend_id(&self) -> String {
        (**self).backend_id()
    }
}

/// One backend invocation, as seen by the call log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CallRecord {
    pub model_name: String,
    pub request_key: String,
    /// 0 for the first try, then 1, 2, ... for retries.
    pub attempt: u32,
    pub temperature: f64,
    pub ok: bool,
}

pub struct Gateway {
    backend: Box<dyn ChatBackend>,
    models: ModelNames,
    retry_limit: u32,
    log: Mutex<Vec<CallRecord>>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.backend_id())
            .field("models", &self.models)
            .field("retry_limit", &self.retry_limit)
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: impl ChatBackend + 'static, models: ModelNames, retry_limit: u32) -> Self {
        Self {
            backend: Box::new(backend),
            models,
            retry_limit,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn models(&self) -> &ModelNames {
        &self.models
    }

    pub fn retry_limit(&self) -> u32 {
        self.retry_limit
    }

    pub fn backend_id(&self) -> String {
        self.backend.backend_id()
    }

    /// A request for `role` with that role's model name and temperature.
    pub fn request(&self, role: Role, user_prompt: impl Into<String>) -> CompletionRequest {
        CompletionRequest {
            model_name: self.models.for_role(role).to_string(),
            system_prompt: None,
            user_prompt: user_prompt.into(),
            temperature: role.temperature(),
            max_output_tokens: role.max_output_tokens(),
        }
    }

    /// Plain completion. Transport failures are retried up to the retry
    /// limit; a missing fixture is returned immediately.
    pub fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        if request.user_prompt.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("empty user prompt".into()));
        }
        let key = fixture_key(request);
        let mut last_error = String::new();
        for attempt in 0..=self.retry_limit {
            let result = self.backend.complete(request);
            self.record(request, &key, attempt, result.is_ok());
            match result {
                Ok(text) => return Ok(text),
                Err(GatewayError::Transport(message)) => {
                    log::warn!("transport failure on attempt {attempt}: {message}");
                    last_error = message;
                }
                Err(other) => return Err(other),
            }
        }
        Err(GatewayError::Unavailable {
            attempts: self.retry_limit + 1,
            message: last_error,
        })
    }

    /// Completion whose reply must be a JSON object containing every key in
    /// `required_keys`. Invalid replies are re-requested with
    /// [`JSON_REPAIR_INSTRUCTION`] appended, at most `retry_limit` times.
    pub fn complete_structured(
        &self,
        request: &CompletionRequest,
        required_keys: &[&str],
    ) -> Result<Value, GatewayError> {
        let mut current = request.clone();
        let mut last = (String::new(), String::new());
        for attempt in 0..=self.retry_limit {
            if attempt == 1 {
                current.user_prompt.push_str(JSON_REPAIR_INSTRUCTION);
            }
            let raw = self.complete(&current)?;
            match parse_json_reply(&raw).and_then(|tree| check_keys(tree, required_keys)) {
                Ok(tree) => return Ok(tree),
                Err(reason) => {
                    log::warn!("structured reply rejected (attempt {attempt}): {reason}");
                    last = (reason, raw);
                }
            }
        }
        Err(GatewayError::StructuredOutput {
            attempts: self.retry_limit + 1,
            reason: last.0,
            raw: last.1,
        })
    }

    pub fn call_log(&self) -> Vec<CallRecord> {
        self.log.lock().expect("call log poisoned").clone()
    }

    fn record(&self, request: &CompletionRequest, key: &str, attempt: u32, ok: bool) {
        self.log.lock().expect("call log poisoned").push(CallRecord {
            model_name: request.model_name.clone(),
            request_key: key.to_string(),
            attempt,
            temperature: request.temperature,
            ok,
        });
    }
}

fn check_keys(tree: Value, required: &[&str]) -> Result<Value, String> {
    let object = tree
        .as_object()
        .ok_or_else(|| "top-level value is not an object".to_string())?;
    match required.iter().find(|k| !object.contains_key(**k)) {
        Some(missing) => Err(format!("missing required key {missing:?}")),
        None => Ok(tree),
    }
}

/// Pulls a JSON document out of a model reply.
///
/// Accepts a fenced block (```` ```json ... ``` ````) or bare JSON wrapped in
/// prose; in the latter case the span from the first `{` to the last `}` is
/// parsed.
pub fn parse_json_reply(raw: &str) -> Result<Value, String> {
    let text = raw.trim();
    let candidate = fenced_block(text).unwrap_or_else(|| match (text.find('{'), text.rfind('}')) {
        (Some(start), Some(end)) if start < end => &text[start..=end],
        _ => text,
    });
    serde_json::from_str(candidate.trim()).map_err(|e| format!("invalid JSON: {e}"))
}

fn fenced_block(text: &str) -> Option<&str> {
    let open = text.find("```")?;
    let after = &text[open + 3..];
    let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
    let body = &after[body_start..];
    let close = body.find("```")?;
    Some(&body[..close])
}
