//! Uniform contract for chat-completion backends plus exact call metering.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{GatewayError, Result};

mod openai;
mod scripted;

pub use openai::OpenAiBackend;
pub use scripted::{ScriptEntry, ScriptedBackend};

/// Why a completion is being requested. Every call is metered under exactly
/// one purpose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CallPurpose {
    Initialize,
    Expand,
    Predict,
}

impl CallPurpose {
    pub fn as_str(&self) -> &'static str {
        match self {
            CallPurpose::Initialize => "initialize",
            CallPurpose::Expand => "expand",
            CallPurpose::Predict => "predict",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

/// A chat-completion request. The last message must be from the user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: Option<String>,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("no messages".into()));
        }
        match self.messages.last() {
            Some(m) if m.role == Role::User => {}
            _ => {
                return Err(GatewayError::InvalidRequest(
                    "last message must have role user".into(),
                ))
            }
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

impl ChatResponse {
    pub fn text(content: impl Into<String>) -> Self {
        Self {
            content: content.into(),
            prompt_tokens: None,
            completion_tokens: None,
        }
    }
}

/// Point-in-time call counts, split by purpose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CallMeter {
    pub total_calls: u64,
    pub initialize: u64,
    pub expand: u64,
    pub predict: u64,
}

impl CallMeter {
    pub fn by_purpose(&self, purpose: CallPurpose) -> u64 {
        match purpose {
            CallPurpose::Initialize => self.initialize,
            CallPurpose::Expand => self.expand,
            CallPurpose::Predict => self.predict,
        }
    }
}

/// Linearizable meter shared by backend implementations. A mutex keeps
/// snapshots internally consistent (total always equals the purpose sum).
#[derive(Debug, Default)]
pub(crate) struct MeterCore {
    inner: Mutex<CallMeter>,
}

impl MeterCore {
    pub fn record(&self, purpose: CallPurpose) {
        let mut m = self.inner.lock().expect("meter poisoned");
        m.total_calls += 1;
        match purpose {
            CallPurpose::Initialize => m.initialize += 1,
            CallPurpose::Expand => m.expand += 1,
            CallPurpose::Predict => m.predict += 1,
        }
    }

    pub fn snapshot(&self) -> CallMeter {
        *self.inner.lock().expect("meter poisoned")
    }
}

/// A chat-completion backend. Implementations must be callable from several
/// threads at once and must count each successful completion exactly once.
pub trait ChatBackend: Send + Sync {
    /// Perform one completion, metering it under `purpose`. Transport retries
    /// inside an implementation must not inflate the meter.
    fn complete(&self, request: &ChatRequest, purpose: CallPurpose) -> Result<ChatResponse, GatewayError>;

    /// Consistent point-in-time copy of the call meter.
    fn meter(&self) -> CallMeter;

    /// True for backends whose responses are matched to requests by call
    /// order; the evaluator then keeps calls sequential in input order so
    /// transcripts stay deterministic under any configured concurrency.
    fn serial_only(&self) -> bool {
        false
    }
}
