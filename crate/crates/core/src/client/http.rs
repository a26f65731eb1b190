//! OpenAI-compatible chat-completion backend over HTTP(S).

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendConfig, BackendError, ChatBackend, Completion};
use crate::batching::estimate_tokens;

#[derive(Debug, Serialize)]
pub struct ChatRequest<'a> {
    pub model: &'a str,
    pub temperature: f64,
    pub max_tokens: u32,
    pub messages: [ChatMessage<'a>; 1],
}

#[derive(Debug, Serialize)]
pub struct ChatMessage<'a> {
    pub role: &'static str,
    pub content: &'a str,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    #[serde(default)]
    choices: Vec<Choice>,
    usage: Option<Usage>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Debug, Deserialize)]
struct ReplyMessage {
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct Usage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

/// Builds the request body for a single-user-message completion.
pub fn request_body<'a>(prompt: &'a str, config: &'a BackendConfig) -> ChatRequest<'a> {
    ChatRequest {
        model: &config.model_name,
        temperature: config.temperature,
        max_tokens: config.max_reply_tokens,
        messages: [ChatMessage {
            role: "user",
            content: prompt,
        }],
    }
}

/// Extracts the first choice text and token usage from a response body.
/// Missing usage falls back to the heuristic estimate.
pub fn parse_completion(body: &str, prompt: &str) -> Result<Completion, BackendError> {
    let resp: ChatResponse =
        serde_json::from_str(body).map_err(|e| BackendError::Protocol(format!("bad JSON: {e}")))?;
    let text = resp
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| BackendError::Protocol("response has no choice content".into()))?;
    let (prompt_tokens, completion_tokens) = match resp.usage {
        Some(u) => (u.prompt_tokens, u.completion_tokens),
        None => (
            estimate_tokens(prompt).tokens() as u64,
            estimate_tokens(&text).tokens() as u64,
        ),
    };
    Ok(Completion {
        text,
        prompt_tokens,
        completion_tokens,
    })
}

pub struct HttpBackend {
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpBackend")
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl HttpBackend {
    /// Reads the API key from the environment variable named in `config`.
    pub fn from_config(config: &BackendConfig) -> Result<Self, BackendError> {
        let api_key = if config.api_key_env.is_empty() {
            None
        } else {
            match std::env::var(&config.api_key_env) {
                Ok(k) if !k.is_empty() => Some(k),
                _ => return Err(BackendError::MissingApiKey(config.api_key_env.clone())),
            }
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.request_timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { agent, api_key })
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, prompt: &str, config: &BackendConfig) -> Result<Completion, BackendError> {
        let mut req = self
            .agent
            .post(&config.endpoint_url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(request_body(prompt, config))
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            let mut body = body;
            body.truncate(500);
            return Err(BackendError::Status { status, body });
        }
        parse_completion(&body, prompt)
    }
}
