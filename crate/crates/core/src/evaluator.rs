//! Zero-shot scoring of a prompt on an example set, and failure extraction.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::config::OptimizerConfig;
use crate::error::{EngineError, Result};
use crate::example::TaskExample;
use crate::gateway::{CallPurpose, ChatBackend, ChatMessage, ChatRequest};
use crate::prompt::{render, StructuredPrompt};
use crate::text::{collapse_whitespace, strip_terminal_punctuation, strip_wrapping_quotes};

/// One example's evaluation: the raw reply, its normalized form, and whether
/// it matched the gold label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationOutcome {
    pub example: TaskExample,
    pub prediction_raw: String,
    pub prediction: String,
    pub correct: bool,
}

/// Evaluation of a whole set, with outcomes in input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub outcomes: Vec<EvaluationOutcome>,
    pub accuracy: f64,
    pub calls_used: usize,
}

/// The examples the evaluated prompt got wrong, with the wrong predictions
/// kept alongside for expansion messages.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FailureSet {
    pub examples: Vec<TaskExample>,
    pub predictions: Vec<String>,
}

impl FailureSet {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Normalize a gold label: lowercase, trim, strip wrapping quotes and
/// terminal punctuation, collapse internal whitespace.
pub fn normalize_label(raw: &str) -> String {
    let unquoted = strip_wrapping_quotes(raw.trim());
    collapse_whitespace(strip_terminal_punctuation(unquoted)).to_lowercase()
}

/// Normalize a model reply. With a choice list, extract the single choice
/// that occurs as a whole token (bare or as a parenthesized letter form); if
/// zero or several choices occur, the normalized raw text is returned and
/// will only match when it equals a normalized choice outright.
pub fn normalize_answer(raw: &str, choices: Option<&[String]>) -> String {
    let normalized = normalize_label(raw);
    let Some(choices) = choices else {
        return normalized;
    };
    let padded = format!(" {normalized} ");
    let mut hits = Vec::new();
    for choice in choices {
        let c = normalize_label(choice);
        if c.is_empty() {
            continue;
        }
        if padded.contains(&format!(" {c} ")) || padded.contains(&format!(" ({c}) ")) {
            hits.push(c);
        }
    }
    match hits.as_slice() {
        [only] => only.clone(),
        _ => normalized,
    }
}

/// Evaluate one example: the rendered prompt goes in as the system message,
/// the example input as the user message.
pub fn predict(
    backend: &dyn ChatBackend,
    prompt: &StructuredPrompt,
    example: &TaskExample,
    config: &OptimizerConfig,
) -> Result<EvaluationOutcome> {
    let request = ChatRequest {
        system: Some(render(prompt)),
        messages: vec![ChatMessage::user(&example.input)],
        temperature: config.predict_temperature,
        max_tokens: None,
    };
    let reply = backend.complete(&request, CallPurpose::Predict)?;
    let prediction = normalize_answer(&reply.content, example.choices.as_deref());
    let correct = prediction == normalize_label(&example.gold);
    Ok(EvaluationOutcome {
        example: example.clone(),
        prediction_raw: reply.content,
        prediction,
        correct,
    })
}

/// Score a prompt on a set. Up to `eval_concurrency` predictions run at
/// once (order-matched backends are driven sequentially); outcomes are
/// assembled in input order and any backend error aborts the whole
/// evaluation, since a partial accuracy would silently bias the gates.
pub fn score_set(
    backend: &dyn ChatBackend,
    prompt: &StructuredPrompt,
    set: &[TaskExample],
    config: &OptimizerConfig,
) -> Result<EvaluationReport> {
    if set.is_empty() {
        return Err(EngineError::EmptyEvalSet);
    }
    let workers = if backend.serial_only() {
        1
    } else {
        config.eval_concurrency.clamp(1, set.len())
    };

    let mut slots: Vec<Option<Result<EvaluationOutcome>>> = Vec::new();
    slots.resize_with(set.len(), || None);

    if workers == 1 {
        for (i, example) in set.iter().enumerate() {
            let outcome = predict(backend, prompt, example, config);
            let failed = outcome.is_err();
            slots[i] = Some(outcome);
            if failed {
                break;
            }
        }
    } else {
        let next = AtomicUsize::new(0);
        let stop = AtomicBool::new(false);
        let results: Mutex<Vec<(usize, Result<EvaluationOutcome>)>> = Mutex::new(Vec::new());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    if stop.load(Ordering::Relaxed) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= set.len() {
                        break;
                    }
                    let outcome = predict(backend, prompt, &set[i], config);
                    if outcome.is_err() {
                        stop.store(true, Ordering::Relaxed);
                    }
                    results.lock().expect("results poisoned").push((i, outcome));
                });
            }
        });
        for (i, outcome) in results.into_inner().expect("results poisoned") {
            slots[i] = Some(outcome);
        }
    }

    let mut outcomes = Vec::with_capacity(set.len());
    for slot in slots {
        match slot {
            Some(Ok(outcome)) => outcomes.push(outcome),
            Some(Err(e)) => return Err(e),
            // A worker aborted before reaching this index.
            None => {
                return Err(EngineError::Validation(
                    "evaluation aborted before completing the set".into(),
                ))
            }
        }
    }
    let correct = outcomes.iter().filter(|o| o.correct).count();
    Ok(EvaluationReport {
        accuracy: correct as f64 / outcomes.len() as f64,
        calls_used: outcomes.len(),
        outcomes,
    })
}

/// Exactly the incorrect examples, in report order.
pub fn extract_failures(report: &EvaluationReport) -> FailureSet {
    let mut examples = Vec::new();
    let mut predictions = Vec::new();
    for outcome in &report.outcomes {
        if !outcome.correct {
            examples.push(outcome.example.clone());
            predictions.push(outcome.prediction_raw.clone());
        }
    }
    FailureSet {
        examples,
        predictions,
    }
}
