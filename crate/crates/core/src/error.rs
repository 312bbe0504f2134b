//! Error types shared across the engine.

use thiserror::Error;

/// Errors produced by dataset handling, the engine, and the evaluator.
#[derive(Debug, Error)]
pub enum EngineError {
    /// A domain invariant was violated while constructing a value.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("sentence index {index} out of range for prompt with {len} sentences")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("exemplar pool is empty")]
    EmptyPool,

    #[error("cannot score an empty example set")]
    EmptyEvalSet,

    /// The model reply for the initial prompt was empty or segmented to zero
    /// sentences, even after one retry.
    #[error("model returned a degenerate initial prompt")]
    DegeneratePrompt,

    /// Every expansion attempt for a step produced a blacklisted or malformed
    /// revision; the run cannot make progress.
    #[error("no usable sentence revision after {attempts} expansion attempts")]
    RevisionExhausted { attempts: usize },

    #[error("dataset error: {0}")]
    Data(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Gateway(#[from] GatewayError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Errors produced by chat-completion backends.
#[derive(Debug, Error)]
pub enum GatewayError {
    /// Transport kept failing (or the server kept returning retryable
    /// statuses) until the retry budget ran out.
    #[error("backend unavailable after {attempts} attempts: {message}")]
    Unavailable { attempts: u32, message: String },

    /// The server answered with a non-retryable, non-2xx status.
    #[error("protocol error (status {status}): {excerpt}")]
    Protocol { status: u16, excerpt: String },

    #[error("malformed response: {0}")]
    MalformedResponse(String),

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("backend configuration error: {0}")]
    Config(String),

    /// The scripted backend ran out of entries for the requested purpose.
    #[error("script exhausted for purpose {purpose}")]
    ScriptExhausted { purpose: &'static str },
}

pub type Result<T, E = EngineError> = std::result::Result<T, E>;
