//! Live HTTP backend for OpenAI-compatible chat-completion endpoints.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use crate::error::GatewayError;

use super::{CallMeter, CallPurpose, ChatBackend, ChatRequest, ChatResponse, MeterCore, Role};

pub const ENV_API_KEY: &str = "PROMPTFORGE_API_KEY";
pub const ENV_BASE_URL: &str = "PROMPTFORGE_BASE_URL";
pub const ENV_MODEL: &str = "PROMPTFORGE_MODEL";

pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo";

const DEFAULT_MAX_RETRIES: u32 = 2;
const DEFAULT_BACKOFF: Duration = Duration::from_millis(250);

/// Blocking client for `POST {base_url}/chat/completions`.
///
/// Transport failures and HTTP 429/5xx are retried up to the retry budget
/// with exponential backoff; any other non-2xx status fails fast. The meter
/// counts one call per successful completion, never per attempt.
pub struct OpenAiBackend {
    agent: ureq::Agent,
    endpoint: String,
    api_key: String,
    model: String,
    max_retries: u32,
    backoff_base: Duration,
    meter: MeterCore,
}

impl OpenAiBackend {
    pub fn new(base_url: &str, api_key: impl Into<String>, model: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        Self {
            agent,
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key: api_key.into(),
            model: model.into(),
            max_retries: DEFAULT_MAX_RETRIES,
            backoff_base: DEFAULT_BACKOFF,
            meter: MeterCore::default(),
        }
    }

    /// Configuration from `PROMPTFORGE_API_KEY`, `PROMPTFORGE_BASE_URL`, and
    /// `PROMPTFORGE_MODEL`.
    pub fn from_env() -> Result<Self, GatewayError> {
        let (base_url, api_key, model) = resolve_env_config(
            std::env::var(ENV_API_KEY).ok(),
            std::env::var(ENV_BASE_URL).ok(),
            std::env::var(ENV_MODEL).ok(),
        )?;
        Ok(Self::new(&base_url, api_key, model))
    }

    pub fn with_retry_policy(mut self, max_retries: u32, backoff_base: Duration) -> Self {
        self.max_retries = max_retries;
        self.backoff_base = backoff_base;
        self
    }

    fn body_for(&self, request: &ChatRequest) -> serde_json::Value {
        let mut messages = Vec::with_capacity(request.messages.len() + 1);
        if let Some(system) = &request.system {
            messages.push(json!({"role": "system", "content": system}));
        }
        for m in &request.messages {
            let role = match m.role {
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            messages.push(json!({"role": role, "content": m.content}));
        }
        let mut body = json!({
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
        });
        if let Some(max_tokens) = request.max_tokens {
            body["max_tokens"] = json!(max_tokens);
        }
        body
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<ChatResponse, AttemptError> {
        let result = self
            .agent
            .post(&self.endpoint)
            .header("authorization", &format!("Bearer {}", self.api_key))
            .header("content-type", "application/json")
            .send_json(body);
        let mut response = match result {
            Ok(r) => r,
            Err(e) => return Err(AttemptError::Transport(e.to_string())),
        };
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| AttemptError::Transport(e.to_string()))?;
        if status == 429 || (500..=599).contains(&status) {
            return Err(AttemptError::RetryableStatus(status));
        }
        if !(200..=299).contains(&status) {
            return Err(AttemptError::Fatal(GatewayError::Protocol {
                status,
                excerpt: excerpt(&text),
            }));
        }
        parse_completion(&text).map_err(AttemptError::Fatal)
    }
}

enum AttemptError {
    Transport(String),
    RetryableStatus(u16),
    Fatal(GatewayError),
}

impl ChatBackend for OpenAiBackend {
    fn complete(&self, request: &ChatRequest, purpose: CallPurpose) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let body = self.body_for(request);
        let attempts = self.max_retries + 1;
        let mut last_failure = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff_base * 2u32.pow(attempt - 1));
            }
            match self.attempt(&body) {
                Ok(response) => {
                    self.meter.record(purpose);
                    return Ok(response);
                }
                Err(AttemptError::Transport(message)) => last_failure = message,
                Err(AttemptError::RetryableStatus(status)) => {
                    last_failure = format!("retryable status {status}");
                }
                Err(AttemptError::Fatal(e)) => return Err(e),
            }
        }
        Err(GatewayError::Unavailable {
            attempts,
            message: last_failure,
        })
    }

    fn meter(&self) -> CallMeter {
        self.meter.snapshot()
    }
}

/// Apply the documented defaults to whatever the environment provides.
pub fn resolve_env_config(
    api_key: Option<String>,
    base_url: Option<String>,
    model: Option<String>,
) -> Result<(String, String, String), GatewayError> {
    let api_key = api_key
        .filter(|k| !k.trim().is_empty())
        .ok_or_else(|| GatewayError::Config(format!("{ENV_API_KEY} is not set")))?;
    Ok((
        base_url.unwrap_or_else(|| DEFAULT_BASE_URL.to_string()),
        api_key,
        model.unwrap_or_else(|| DEFAULT_MODEL.to_string()),
    ))
}

#[derive(Deserialize)]
struct ApiResponse {
    #[serde(default)]
    choices: Vec<ApiChoice>,
    #[serde(default)]
    usage: Option<ApiUsage>,
}

#[derive(Deserialize)]
struct ApiChoice {
    message: ApiMessage,
}

#[derive(Deserialize)]
struct ApiMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ApiUsage {
    #[serde(default)]
    prompt_tokens: Option<u64>,
    #[serde(default)]
    completion_tokens: Option<u64>,
}

fn parse_completion(text: &str) -> Result<ChatResponse, GatewayError> {
    let parsed: ApiResponse = serde_json::from_str(text)
        .map_err(|e| GatewayError::MalformedResponse(format!("{e}; body: {}", excerpt(text))))?;
    let first = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| GatewayError::MalformedResponse("response has no choices".into()))?;
    let (prompt_tokens, completion_tokens) = parsed
        .usage
        .map(|u| (u.prompt_tokens, u.completion_tokens))
        .unwrap_or((None, None));
    Ok(ChatResponse {
        // Empty content is passed through; the caller decides what it means.
        content: first.message.content.unwrap_or_default(),
        prompt_tokens,
        completion_tokens,
    })
}

fn excerpt(text: &str) -> String {
    const LIMIT: usize = 240;
    let trimmed = text.trim();
    if trimmed.len() <= LIMIT {
        trimmed.to_string()
    } else {
        let mut cut = LIMIT;
        while !trimmed.is_char_boundary(cut) {
            cut -= 1;
        }
        format!("{}…", &trimmed[..cut])
    }
}
