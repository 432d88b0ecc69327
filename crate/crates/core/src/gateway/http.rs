//! OpenAI-compatible chat-completion client.

use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatBackend, CompletionRequest, GatewayError};

#[derive(Debug, Clone)]
pub struct HttpBackend {
    base_url: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    /// `base_url` is the API root, e.g. `https://api.openai.com/v1`. The
    /// bearer token is read from the `api_key_env` environment variable; a
    /// missing variable means no `Authorization` header.
    pub fn new(base_url: impl Into<String>, api_key_env: Option<&str>) -> Self {
        let token = api_key_env.and_then(|var| std::env::var(var).ok());
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(300)))
            .build()
            .into();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            token,
            agent,
        }
    }

    /// Request body sent to `/chat/completions`.
    pub fn request_body(request: &CompletionRequest) -> Value {
        let mut messages = Vec::new();
        if let Some(system) = &request.system_prompt {
            messages.push(json!({"role": "system", "content": system}));
        }
        messages.push(json!({"role": "user", "content": request.user_prompt}));
        json!({
            "model": request.model_name,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        })
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let url = format!("{}/chat/completions", self.base_url);
        let mut call = self.agent.post(&url);
        if let Some(token) = &self.token {
            call = call.header("Authorization", &format!("Bearer {token}"));
        }
        let reply: Value = call
            .send_json(Self::request_body(request))
            .map_err(|e| GatewayError::Transport(e.to_string()))?
            .into_body()
            .read_json()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        reply["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| GatewayError::Transport(format!("unexpected reply shape: {reply}")))
    }

    fn backend_id(&self) -> String {
        format!("http({})", self.base_url)
    }
}
