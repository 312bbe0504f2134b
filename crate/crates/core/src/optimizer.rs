//! Phase two: sentence sampling under exponential weights, failure-guided
//! expansion with a revision blacklist, two-gate acceptance, and the
//! gate-failure convergence rule.

use std::collections::HashSet;
use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{OptimizerConfig, FAILURE_SAMPLE_CAP};
use crate::error::{EngineError, Result};
use crate::evaluator::{extract_failures, score_set, FailureSet};
use crate::example::DatasetBundle;
use crate::gateway::{CallMeter, CallPurpose, ChatBackend, ChatMessage, ChatRequest};
use crate::initializer::{
    build_meta_instruction, generate_initial_prompt, segment_sentences, select_exemplars,
};
use crate::prompt::{render, replace_sentence, StructuredPrompt};
use crate::templates::{
    PromptTemplates, CURRENT_PROMPT_PLACEHOLDER, FAILURES_PLACEHOLDER,
    TARGET_SENTENCE_PLACEHOLDER,
};
use crate::text::{
    collapse_whitespace, strip_markdown_fences, strip_terminal_punctuation, strip_wrapping_quotes,
};
use crate::trace::{ConvergenceReason, GateKind, TraceEvent, TraceRecorder};

/// Normalization used for blacklist membership: lowercase, collapsed
/// whitespace, terminal punctuation stripped.
pub fn normalize_revision(s: &str) -> String {
    collapse_whitespace(strip_terminal_punctuation(s)).to_lowercase()
}

/// Rejected sentence revisions, compared under [`normalize_revision`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RevisionBlacklist {
    entries: HashSet<String>,
}

impl RevisionBlacklist {
    pub fn insert(&mut self, revision: &str) -> bool {
        self.entries.insert(normalize_revision(revision))
    }

    pub fn contains(&self, revision: &str) -> bool {
        self.entries.contains(&normalize_revision(revision))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Running count of gate failures; hitting the limit ends the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvergenceCounter {
    gate_failures: u32,
    limit: u32,
}

impl ConvergenceCounter {
    pub fn new(limit: u32) -> Self {
        Self {
            gate_failures: 0,
            limit,
        }
    }

    pub fn record_failure(&mut self) {
        self.gate_failures = (self.gate_failures + 1).min(self.limit);
    }

    pub fn gate_failures(&self) -> u32 {
        self.gate_failures
    }

    pub fn exhausted(&self) -> bool {
        self.gate_failures >= self.limit
    }
}

/// Everything a finished run reports.
#[derive(Debug, Clone)]
pub struct OptimizationResult {
    pub final_prompt: StructuredPrompt,
    pub accepted_steps: u32,
    pub trace: crate::trace::RunTrace,
    pub validation_history: Vec<(u32, f64)>,
    pub meter: CallMeter,
}

/// Softmax over the sentence weights, computed with max-subtraction so the
/// exponentials cannot overflow. Every probability is strictly positive
/// (underflowed terms are floored at the smallest normal float) and the
/// vector sums to one.
pub fn sampling_distribution(weights: &[f64]) -> Vec<f64> {
    assert!(!weights.is_empty(), "sampling over zero sentences");
    let max = weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = weights
        .iter()
        .map(|w| (w - max).exp().max(f64::MIN_POSITIVE))
        .collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Inverse-CDF draw from a probability vector using one uniform variate.
pub fn sample_sentence(probabilities: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut cdf = 0.0;
    for (i, p) in probabilities.iter().enumerate() {
        cdf += p;
        if u < cdf {
            return i;
        }
    }
    probabilities.len() - 1
}

/// Reward blending validation accuracy with failure-set accuracy.
pub fn mixed_score(validation_accuracy: f64, failure_accuracy: f64, alpha: f64) -> f64 {
    alpha * validation_accuracy + (1.0 - alpha) * failure_accuracy
}

/// Exponential update of the sampled sentence's weight, importance-weighted
/// by its sampling probability, clamped into the weight band. Only the
/// sampled arm is ever updated.
pub fn update_weight(
    current_weight: f64,
    probability: f64,
    sentence_count: usize,
    eta: f64,
    reward: f64,
) -> f64 {
    let exponent = eta * reward / (probability * sentence_count as f64);
    (current_weight * exponent.exp()).clamp(crate::prompt::WEIGHT_FLOOR, crate::prompt::WEIGHT_CEILING)
}

/// Both acceptance gates use the same strict inequality.
pub fn gate_passes(delta: f64, threshold: f64) -> bool {
    delta > threshold
}

/// What one expansion call produced.
#[derive(Debug, Clone, PartialEq)]
pub enum ExpandReply {
    /// A cleaned single-sentence revision.
    Revision(String),
    /// Empty or multi-sentence reply; rejected without touching the gates.
    Invalid { raw: String },
}

fn serialize_failures(failures: &FailureSet) -> String {
    let mut out = String::new();
    for (i, example) in failures.examples.iter().take(FAILURE_SAMPLE_CAP).enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!(
            "Case {}:\nInput: {}\nExpected: {}\n",
            i + 1,
            example.input,
            example.gold
        ));
        if let Some(prediction) = failures.predictions.get(i) {
            if !prediction.trim().is_empty() {
                out.push_str(&format!("Model answered: {}\n", prediction));
            }
        }
    }
    out
}

/// Drop a "Here is ...:"-style preamble when the rest of the reply is one
/// quoted sentence.
fn strip_revision_preamble(s: &str) -> &str {
    if let Some(pos) = s.find(':') {
        let rest = s[pos + 1..].trim();
        for (open, close) in [('"', '"'), ('\'', '\''), ('“', '”')] {
            if rest.len() >= open.len_utf8() + close.len_utf8()
                && rest.starts_with(open)
                && rest.ends_with(close)
            {
                let inner = &rest[open.len_utf8()..rest.len() - close.len_utf8()];
                if !inner.trim().is_empty() && !inner.contains(open) {
                    return inner.trim();
                }
            }
        }
    }
    s
}

/// Clean an expansion reply and check it is a single sentence.
pub fn clean_revision(raw: &str) -> ExpandReply {
    let defenced = strip_markdown_fences(raw);
    let unquoted = strip_wrapping_quotes(&defenced);
    let cleaned = strip_revision_preamble(unquoted).trim().to_string();
    let segments = segment_sentences(&cleaned);
    match segments.as_slice() {
        [single] => ExpandReply::Revision(single.clone()),
        _ => ExpandReply::Invalid {
            raw: raw.to_string(),
        },
    }
}

/// Ask the backend to rewrite the sampled sentence, given the whole current
/// prompt and a capped sample of failure cases. The gate evaluation still
/// sees the full failure set.
pub fn expand_sentence(
    backend: &dyn ChatBackend,
    templates: &PromptTemplates,
    current_prompt: &StructuredPrompt,
    failures: &FailureSet,
    target_index: usize,
    config: &OptimizerConfig,
) -> Result<ExpandReply> {
    if failures.is_empty() {
        return Err(EngineError::Validation(
            "expansion requires a non-empty failure set".into(),
        ));
    }
    let target = current_prompt
        .sentences()
        .get(target_index)
        .ok_or(EngineError::IndexOutOfRange {
            index: target_index,
            len: current_prompt.len(),
        })?;
    let message = templates
        .expansion_template()
        .replace(CURRENT_PROMPT_PLACEHOLDER, &render(current_prompt))
        .replace(FAILURES_PLACEHOLDER, &serialize_failures(failures))
        .replace(TARGET_SENTENCE_PLACEHOLDER, target);
    let request = ChatRequest {
        system: None,
        messages: vec![ChatMessage::user(message)],
        temperature: config.generate_temperature,
        max_tokens: None,
    };
    let reply = backend.complete(&request, CallPurpose::Expand)?;
    Ok(clean_revision(&reply.content))
}

/// Outcome of the failure gate. The incumbent's score on its own failure set
/// is zero by construction (those are exactly the examples it got wrong at
/// prediction temperature zero), so it is asserted rather than re-queried.
#[derive(Debug, Clone, PartialEq)]
pub struct FailureGateOutcome {
    pub passed: bool,
    pub delta: f64,
    pub candidate_score: f64,
}

pub fn failure_gate(
    backend: &dyn ChatBackend,
    candidate: &StructuredPrompt,
    failures: &FailureSet,
    config: &OptimizerConfig,
) -> Result<FailureGateOutcome> {
    let report = score_set(backend, candidate, &failures.examples, config)?;
    let delta = report.accuracy - 0.0;
    Ok(FailureGateOutcome {
        passed: gate_passes(delta, config.h_f),
        delta,
        candidate_score: report.accuracy,
    })
}

/// Outcome of the validation gate. The incumbent accuracy is the cached
/// result of the evaluation that accepted it; it is never recomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationGateOutcome {
    pub passed: bool,
    pub delta: f64,
    pub report: crate::evaluator::EvaluationReport,
}

pub fn validation_gate(
    backend: &dyn ChatBackend,
    candidate: &StructuredPrompt,
    incumbent_accuracy: f64,
    validation: &[crate::example::TaskExample],
    config: &OptimizerConfig,
) -> Result<ValidationGateOutcome> {
    let report = score_set(backend, candidate, validation, config)?;
    let delta = report.accuracy - incumbent_accuracy;
    Ok(ValidationGateOutcome {
        passed: gate_passes(delta, config.h_v),
        delta,
        report,
    })
}

/// Run the whole dual-phase optimization. Events stream into `trace_sink`
/// as they happen, so an aborted run still leaves a readable prefix.
pub fn run_optimization(
    backend: &dyn ChatBackend,
    data: &DatasetBundle,
    config: &OptimizerConfig,
    templates: &PromptTemplates,
    trace_sink: Option<&mut dyn Write>,
) -> Result<OptimizationResult> {
    config.validate()?;
    let mut trace = TraceRecorder::new(trace_sink);
    let mut sampler = ChaCha8Rng::seed_from_u64(config.rng_seed);

    // Phase one.
    let selected = select_exemplars(&data.exemplar_pool, config.exemplar_count, config.rng_seed)?;
    let meta = build_meta_instruction(config.schema_level, &selected.set, templates)?;
    let mut incumbent = generate_initial_prompt(backend, &meta, config)?;

    let initial_report = score_set(backend, &incumbent, &data.validation, config)?;
    let mut incumbent_accuracy = initial_report.accuracy;
    let mut failures = extract_failures(&initial_report);
    let mut validation_history = vec![(0u32, incumbent_accuracy)];

    trace.record(
        0,
        TraceEvent::InitPromptGenerated {
            sentences: incumbent.sentences().to_vec(),
            weights: incumbent.weights().to_vec(),
            exemplar_inputs: selected
                .set
                .examples()
                .iter()
                .map(|e| e.input.clone())
                .collect(),
            validation_accuracy: incumbent_accuracy,
            failure_count: failures.len(),
            total_calls: backend.meter().total_calls,
            failure_baseline_assumed_zero: true,
        },
    )?;

    let mut accepted: u32 = 0;
    let mut counter = ConvergenceCounter::new(config.failure_limit);
    let mut blacklist = RevisionBlacklist::default();
    let mut perfect = failures.is_empty();
    let mut consecutive_dead_samples: usize = 0;
    let mut wasted_expansions: usize = 0;

    while !perfect && accepted < config.max_steps && !counter.exhausted() {
        // (a) sample a sentence under the current weights
        let probabilities = sampling_distribution(incumbent.weights());
        let target = sample_sentence(&probabilities, &mut sampler);
        trace.record(
            accepted,
            TraceEvent::SentenceSampled {
                index: target,
                probabilities: probabilities.clone(),
            },
        )?;

        // (b) expansion, regenerating past blacklisted or malformed replies
        let mut revision: Option<String> = None;
        for _ in 0..=config.max_blacklist_retries {
            match expand_sentence(backend, templates, &incumbent, &failures, target, config)? {
                ExpandReply::Invalid { raw } => {
                    blacklist.insert(&raw);
                    wasted_expansions += 1;
                    trace.record(
                        accepted,
                        TraceEvent::BlacklistHit {
                            revision: normalize_revision(&raw),
                        },
                    )?;
                }
                ExpandReply::Revision(text) => {
                    if blacklist.contains(&text) {
                        wasted_expansions += 1;
                        trace.record(
                            accepted,
                            TraceEvent::BlacklistHit {
                                revision: normalize_revision(&text),
                            },
                        )?;
                    } else {
                        revision = Some(text);
                        break;
                    }
                }
            }
        }
        let Some(revision) = revision else {
            // Blacklist hits do not move the convergence counter; they are
            // bounded here instead so the loop always terminates.
            consecutive_dead_samples += 1;
            if consecutive_dead_samples > incumbent.len() {
                return Err(EngineError::RevisionExhausted {
                    attempts: wasted_expansions,
                });
            }
            continue;
        };
        consecutive_dead_samples = 0;
        trace.record(
            accepted,
            TraceEvent::RevisionProposed {
                original: incumbent.sentences()[target].clone(),
                revised: revision.clone(),
            },
        )?;

        let candidate = replace_sentence(&incumbent, target, &revision)?;

        // (c) failure gate on the full failure set
        let failure_outcome = failure_gate(backend, &candidate, &failures, config)?;
        if !failure_outcome.passed {
            blacklist.insert(&revision);
            counter.record_failure();
            trace.record(
                accepted,
                TraceEvent::GateFailed {
                    gate: GateKind::Failure,
                    delta: failure_outcome.delta,
                },
            )?;
            continue;
        }

        // (d) validation gate against the cached incumbent accuracy
        let validation_outcome =
            validation_gate(backend, &candidate, incumbent_accuracy, &data.validation, config)?;
        if !validation_outcome.passed {
            counter.record_failure();
            trace.record(
                accepted,
                TraceEvent::GateFailed {
                    gate: GateKind::Validation,
                    delta: validation_outcome.delta,
                },
            )?;
            continue;
        }

        // (e) accept: update only the sampled sentence's weight
        let reward = mixed_score(
            validation_outcome.report.accuracy,
            failure_outcome.candidate_score,
            config.alpha,
        );
        let new_weight = update_weight(
            incumbent.weights()[target],
            probabilities[target],
            incumbent.len(),
            config.eta,
            reward,
        );
        accepted += 1;
        incumbent = candidate.with_weight(target, new_weight)?.at_step(accepted);
        incumbent_accuracy = validation_outcome.report.accuracy;
        failures = extract_failures(&validation_outcome.report);
        validation_history.push((accepted, incumbent_accuracy));
        trace.record(
            accepted,
            TraceEvent::StepAccepted {
                weights_after: incumbent.weights().to_vec(),
                validation_accuracy: incumbent_accuracy,
                failure_count: failures.len(),
                total_calls: backend.meter().total_calls,
            },
        )?;
        perfect = failures.is_empty();
    }

    let reason = if perfect {
        ConvergenceReason::PerfectValidation
    } else if accepted >= config.max_steps {
        ConvergenceReason::StepBudget
    } else {
        ConvergenceReason::FailureLimit
    };

    let meter = backend.meter();
    trace.record(
        accepted,
        TraceEvent::CallAccounting {
            total_calls: meter.total_calls,
            initialize: meter.initialize,
            expand: meter.expand,
            predict: meter.predict,
        },
    )?;
    trace.record(accepted, TraceEvent::Converged { reason })?;

    Ok(OptimizationResult {
        final_prompt: incumbent,
        accepted_steps: accepted,
        trace: trace.into_trace(),
        validation_history,
        meter,
    })
}
