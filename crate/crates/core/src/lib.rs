//! Dual-phase prompt optimizer for black-box chat models.
//!
//! Phase one writes a structured initial prompt from task exemplars via a
//! meta-instruction; phase two revises it sentence by sentence, sampling
//! sentences under exponential weights, steering revisions with current
//! failure cases, and accepting a candidate only when it clears both a
//! failure-set gate and a validation gate. Accumulated gate failures end
//! the run.
//!
//! The crate also ships the surrounding harness: an OpenAI-compatible HTTP
//! backend, an order-scripted backend for golden tests, a deterministic
//! simulated task environment, JSONL dataset loading with splitting, and
//! trace-derived run reports.

pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluator;
pub mod example;
pub mod gateway;
pub mod initializer;
pub mod optimizer;
pub mod prompt;
pub mod report;
pub mod sim;
pub mod templates;
pub mod text;
pub mod trace;

pub use config::{OptimizerConfig, FAILURE_SAMPLE_CAP};
pub use error::{EngineError, GatewayError};
pub use evaluator::{EvaluationOutcome, EvaluationReport, FailureSet};
pub use example::{DatasetBundle, TaskExample};
pub use gateway::{
    CallMeter, CallPurpose, ChatBackend, ChatMessage, ChatRequest, ChatResponse, OpenAiBackend,
    ScriptedBackend,
};
pub use initializer::{ExemplarSet, SelectedExemplars};
pub use optimizer::{run_optimization, OptimizationResult, RevisionBlacklist};
pub use prompt::{render, replace_sentence, StructuredPrompt};
pub use report::{report_from_trace, RunReport};
pub use sim::{SimBackend, SimTaskSpec};
pub use templates::PromptTemplates;
pub use trace::{ConvergenceReason, GateKind, RunTrace, TraceEvent, TraceRecord};
