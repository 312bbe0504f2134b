//! Shared machinery for the acceptance suite: a straight-line reference
//! interpreter of the optimization algorithm, scripted scenario plumbing,
//! tolerant trace comparison, and the closed-form call-accounting check.
//!
//! The reference interpreter is written independently of the engine: it
//! re-derives sentence splitting, answer matching, the softmax, the gates,
//! and the weight update from their definitions, consumes the same script
//! and seed, and emits the trace it believes the algorithm must produce.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use promptforge::gateway::{CallPurpose, ScriptEntry, ScriptedBackend};
use promptforge::trace::{ConvergenceReason, GateKind, TraceEvent, TraceRecord};
use promptforge::{DatasetBundle, OptimizerConfig, RunTrace, TaskExample};

/// Salt the engine documents for the exemplar-selection stream.
const EXEMPLAR_SEED_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

/// A scripted run: everything both the engine and the reference consume.
#[derive(Clone)]
pub struct Scenario {
    pub name: &'static str,
    pub config: OptimizerConfig,
    /// Exemplar pool inputs (golds are all "yes"; content is irrelevant).
    pub pool: Vec<String>,
    /// Validation golds, all "yes"; inputs are generated as v0, v1, ...
    pub validation_size: usize,
    pub init_replies: Vec<String>,
    pub expand_replies: Vec<String>,
    pub predict_replies: Vec<String>,
}

impl Scenario {
    pub fn bundle(&self) -> DatasetBundle {
        let pool = self
            .pool
            .iter()
            .map(|p| TaskExample::new(p.clone(), "yes").unwrap())
            .collect();
        let validation = (0..self.validation_size)
            .map(|i| TaskExample::new(format!("v{i}"), "yes").unwrap())
            .collect();
        DatasetBundle::new(pool, validation, vec![]).unwrap()
    }

    pub fn backend(&self) -> ScriptedBackend {
        let mut entries = Vec::new();
        for r in &self.init_replies {
            entries.push(ScriptEntry {
                purpose: CallPurpose::Initialize,
                content: r.clone(),
            });
        }
        for r in &self.expand_replies {
            entries.push(ScriptEntry {
                purpose: CallPurpose::Expand,
                content: r.clone(),
            });
        }
        for r in &self.predict_replies {
            entries.push(ScriptEntry {
                purpose: CallPurpose::Predict,
                content: r.clone(),
            });
        }
        ScriptedBackend::new(entries)
    }
}

// --- independent text handling (deliberately simple; scenario texts are
// --- plain declarative sentences so these suffice) ---

fn ref_normalize(s: &str) -> String {
    s.trim()
        .trim_end_matches(['.', '!', '?'])
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn ref_segment(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in text.trim().lines() {
        let mut current = String::new();
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            current.push(chars[i]);
            if matches!(chars[i], '.' | '!' | '?')
                && i + 1 < chars.len()
                && chars[i + 1].is_whitespace()
            {
                let t = current.trim().to_string();
                if !t.is_empty() {
                    out.push(t);
                }
                current.clear();
            }
            i += 1;
        }
        let t = current.trim().to_string();
        if !t.is_empty() {
            out.push(t);
        }
    }
    out
}

fn ref_clean_reply(raw: &str) -> String {
    let mut t = raw.trim().to_string();
    if t.starts_with("```") {
        t = t
            .trim_start_matches("```")
            .trim_end_matches("```")
            .trim()
            .to_string();
    }
    if t.len() >= 2 && t.starts_with('"') && t.ends_with('"') && !t[1..t.len() - 1].contains('"') {
        t = t[1..t.len() - 1].trim().to_string();
    }
    t
}

fn ref_softmax(weights: &[f64]) -> Vec<f64> {
    let max = weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = weights
        .iter()
        .map(|w| (w - max).exp().max(f64::MIN_POSITIVE))
        .collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

/// Replay the algorithm over the scenario's script and emit the expected
/// trace, linearly, exactly as written in its statement: initialize and
/// derive failures, then loop sample -> expand (blacklist-checked) ->
/// failure gate -> validation gate -> accept and update the sampled weight,
/// converging on the gate-failure limit, the step budget, or an empty
/// failure set.
// The negated float comparisons restate the gates' strict inequalities.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn reference_trace(scenario: &Scenario) -> Vec<TraceRecord> {
    let cfg = &scenario.config;
    let mut records: Vec<TraceRecord> = Vec::new();
    let mut seq = 0u64;
    let mut record = |records: &mut Vec<TraceRecord>, step: u32, event: TraceEvent| {
        records.push(TraceRecord {
            seq,
            step,
            event,
        });
        seq += 1;
    };

    let mut init_q = scenario.init_replies.clone();
    let mut expand_q = scenario.expand_replies.clone();
    let mut predict_q = scenario.predict_replies.clone();
    let mut init_calls = 0u64;
    let mut expand_calls = 0u64;
    let mut predict_calls = 0u64;

    // exemplar selection: dedup by normalized input, seeded shuffle, take N
    let mut seen = HashSet::new();
    let mut unique: Vec<String> = Vec::new();
    for input in &scenario.pool {
        if seen.insert(ref_normalize(input)) {
            unique.push(input.clone());
        }
    }
    let mut exemplar_rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ EXEMPLAR_SEED_SALT);
    unique.shuffle(&mut exemplar_rng);
    let exemplar_inputs: Vec<String> = unique.into_iter().take(cfg.exemplar_count).collect();

    // initial prompt, with one retry on a degenerate reply
    let mut sentences: Vec<String> = Vec::new();
    for _ in 0..2 {
        let reply = init_q.remove(0);
        init_calls += 1;
        sentences = ref_segment(&ref_clean_reply(&reply));
        if !sentences.is_empty() {
            break;
        }
    }
    assert!(!sentences.is_empty(), "reference: degenerate init script");
    let mut weights = vec![1.0f64; sentences.len()];

    let golds: Vec<String> = (0..scenario.validation_size).map(|_| "yes".into()).collect();
    let answer = |predict_q: &mut Vec<String>, gold: &str| -> (bool, String) {
        let reply = predict_q.remove(0);
        (ref_normalize(&reply) == ref_normalize(gold), reply)
    };

    // initial validation pass
    let mut incumbent_accuracy;
    // failures: (validation index, raw prediction)
    let mut failures: Vec<(usize, String)>;
    {
        let mut correct = 0usize;
        let mut fail = Vec::new();
        for (i, gold) in golds.iter().enumerate() {
            let (ok, raw) = answer(&mut predict_q, gold);
            predict_calls += 1;
            if ok {
                correct += 1;
            } else {
                fail.push((i, raw));
            }
        }
        incumbent_accuracy = correct as f64 / golds.len() as f64;
        failures = fail;
    }

    record(
        &mut records,
        0,
        TraceEvent::InitPromptGenerated {
            sentences: sentences.clone(),
            weights: weights.clone(),
            exemplar_inputs,
            validation_accuracy: incumbent_accuracy,
            failure_count: failures.len(),
            total_calls: init_calls + expand_calls + predict_calls,
            failure_baseline_assumed_zero: true,
        },
    );

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut accepted = 0u32;
    let mut gate_failures = 0u32;
    let mut blacklist: HashSet<String> = HashSet::new();
    let mut perfect = failures.is_empty();

    while !perfect && accepted < cfg.max_steps && gate_failures < cfg.failure_limit {
        let probabilities = ref_softmax(&weights);
        let u: f64 = rng.random();
        let mut target = probabilities.len() - 1;
        let mut cdf = 0.0;
        for (i, p) in probabilities.iter().enumerate() {
            cdf += p;
            if u < cdf {
                target = i;
                break;
            }
        }
        record(
            &mut records,
            accepted,
            TraceEvent::SentenceSampled {
                index: target,
                probabilities: probabilities.clone(),
            },
        );

        let mut revision: Option<String> = None;
        for _ in 0..=cfg.max_blacklist_retries {
            let raw = expand_q.remove(0);
            expand_calls += 1;
            let segments = ref_segment(&ref_clean_reply(&raw));
            if segments.len() != 1 {
                blacklist.insert(ref_normalize(&raw));
                record(
                    &mut records,
                    accepted,
                    TraceEvent::BlacklistHit {
                        revision: ref_normalize(&raw),
                    },
                );
                continue;
            }
            let text = segments.into_iter().next().unwrap();
            if blacklist.contains(&ref_normalize(&text)) {
                record(
                    &mut records,
                    accepted,
                    TraceEvent::BlacklistHit {
                        revision: ref_normalize(&text),
                    },
                );
                continue;
            }
            revision = Some(text);
            break;
        }
        let Some(revision) = revision else {
            continue; // resample; scenarios never starve completely
        };
        record(
            &mut records,
            accepted,
            TraceEvent::RevisionProposed {
                original: sentences[target].clone(),
                revised: revision.clone(),
            },
        );

        // failure gate over the current failure set, in validation order
        let mut fixed = 0usize;
        for _ in 0..failures.len() {
            let (ok, _) = answer(&mut predict_q, "yes");
            predict_calls += 1;
            if ok {
                fixed += 1;
            }
        }
        let failure_score = fixed as f64 / failures.len() as f64;
        let failure_delta = failure_score - 0.0;
        if !(failure_delta > cfg.h_f) {
            blacklist.insert(ref_normalize(&revision));
            gate_failures += 1;
            record(
                &mut records,
                accepted,
                TraceEvent::GateFailed {
                    gate: GateKind::Failure,
                    delta: failure_delta,
                },
            );
            continue;
        }

        // validation gate against the cached incumbent accuracy
        let mut correct = 0usize;
        let mut new_failures = Vec::new();
        for (i, gold) in golds.iter().enumerate() {
            let (ok, raw) = answer(&mut predict_q, gold);
            predict_calls += 1;
            if ok {
                correct += 1;
            } else {
                new_failures.push((i, raw));
            }
        }
        let candidate_accuracy = correct as f64 / golds.len() as f64;
        let validation_delta = candidate_accuracy - incumbent_accuracy;
        if !(validation_delta > cfg.h_v) {
            gate_failures += 1;
            record(
                &mut records,
                accepted,
                TraceEvent::GateFailed {
                    gate: GateKind::Validation,
                    delta: validation_delta,
                },
            );
            continue;
        }

        // accept
        let reward = cfg.alpha * candidate_accuracy + (1.0 - cfg.alpha) * failure_score;
        let exponent = cfg.eta * reward / (probabilities[target] * weights.len() as f64);
        weights[target] = (weights[target] * exponent.exp()).clamp(1e-6, 1e6);
        sentences[target] = revision;
        accepted += 1;
        incumbent_accuracy = candidate_accuracy;
        failures = new_failures;
        record(
            &mut records,
            accepted,
            TraceEvent::StepAccepted {
                weights_after: weights.clone(),
                validation_accuracy: incumbent_accuracy,
                failure_count: failures.len(),
                total_calls: init_calls + expand_calls + predict_calls,
            },
        );
        perfect = failures.is_empty();
    }

    let reason = if perfect {
        ConvergenceReason::PerfectValidation
    } else if accepted >= cfg.max_steps {
        ConvergenceReason::StepBudget
    } else {
        ConvergenceReason::FailureLimit
    };
    record(
        &mut records,
        accepted,
        TraceEvent::CallAccounting {
            total_calls: init_calls + expand_calls + predict_calls,
            initialize: init_calls,
            expand: expand_calls,
            predict: predict_calls,
        },
    );
    record(&mut records, accepted, TraceEvent::Converged { reason });
    records
}

/// Structural equality with a 1e-12 tolerance on floats (the reference may
/// compute softmax terms in a different association order).
pub fn traces_equivalent(actual: &[TraceRecord], expected: &[TraceRecord]) -> Result<(), String> {
    if actual.len() != expected.len() {
        return Err(format!(
            "trace length mismatch: engine {} vs reference {}",
            actual.len(),
            expected.len()
        ));
    }
    for (i, (a, e)) in actual.iter().zip(expected.iter()).enumerate() {
        let av = serde_json::to_value(a).unwrap();
        let ev = serde_json::to_value(e).unwrap();
        if let Err(path) = values_equivalent(&av, &ev, String::new()) {
            return Err(format!(
                "event {i} differs at {path}:\n  engine:    {av}\n  reference: {ev}"
            ));
        }
    }
    Ok(())
}

fn values_equivalent(
    a: &serde_json::Value,
    b: &serde_json::Value,
    path: String,
) -> Result<(), String> {
    use serde_json::Value;
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            if (x - y).abs() <= 1e-12 {
                Ok(())
            } else {
                Err(path)
            }
        }
        (Value::Array(xs), Value::Array(ys)) => {
            if xs.len() != ys.len() {
                return Err(path);
            }
            for (i, (x, y)) in xs.iter().zip(ys.iter()).enumerate() {
                values_equivalent(x, y, format!("{path}[{i}]"))?;
            }
            Ok(())
        }
        (Value::Object(xs), Value::Object(ys)) => {
            if xs.len() != ys.len() {
                return Err(path);
            }
            for (k, x) in xs {
                let Some(y) = ys.get(k) else {
                    return Err(format!("{path}.{k}"));
                };
                values_equivalent(x, y, format!("{path}.{k}"))?;
            }
            Ok(())
        }
        _ => {
            if a == b {
                Ok(())
            } else {
                Err(path)
            }
        }
    }
}

/// Closed-form call accounting from the trace alone:
/// one initialization, one expansion per proposed-or-blacklisted revision,
/// and predictions of `|V|` for the initial pass, the current failure-set
/// size for each attempt that reached the failure gate, and `|V|` for each
/// attempt that reached the validation gate. Checked with zero tolerance
/// against both the meter and the trace's own accounting event.
pub fn assert_exact_call_accounting(
    trace: &RunTrace,
    meter: &promptforge::CallMeter,
    validation_size: usize,
) {
    let mut current_failures: usize = 0;
    let mut expand_count: u64 = 0;
    let mut predict_count: u64 = validation_size as u64;
    let mut accounting_event: Option<(u64, u64, u64, u64)> = None;

    for record in &trace.records {
        match &record.event {
            TraceEvent::InitPromptGenerated { failure_count, .. } => {
                current_failures = *failure_count;
            }
            TraceEvent::RevisionProposed { .. } | TraceEvent::BlacklistHit { .. } => {
                expand_count += 1;
            }
            TraceEvent::GateFailed { gate, .. } => {
                predict_count += current_failures as u64;
                if *gate == GateKind::Validation {
                    predict_count += validation_size as u64;
                }
            }
            TraceEvent::StepAccepted { failure_count, .. } => {
                predict_count += current_failures as u64 + validation_size as u64;
                current_failures = *failure_count;
            }
            TraceEvent::CallAccounting {
                total_calls,
                initialize,
                expand,
                predict,
            } => accounting_event = Some((*total_calls, *initialize, *expand, *predict)),
            _ => {}
        }
    }

    let expected_init = 1u64;
    let expected_total = expected_init + expand_count + predict_count;
    assert_eq!(meter.initialize, expected_init, "initialize calls");
    assert_eq!(meter.expand, expand_count, "expand calls");
    assert_eq!(meter.predict, predict_count, "predict calls");
    assert_eq!(meter.total_calls, expected_total, "total calls");
    let (t, i, e, p) = accounting_event.expect("trace has a call-accounting event");
    assert_eq!((t, i, e, p), (expected_total, expected_init, expand_count, predict_count));
}

// --- scenario script helpers ---

pub fn yes(n: usize) -> Vec<String> {
    vec!["yes".to_string(); n]
}

pub fn no(n: usize) -> Vec<String> {
    vec!["no".to_string(); n]
}

pub fn pattern(bits: &[bool]) -> Vec<String> {
    bits.iter()
        .map(|b| if *b { "yes".to_string() } else { "no".to_string() })
        .collect()
}

pub fn concat(blocks: Vec<Vec<String>>) -> Vec<String> {
    blocks.into_iter().flatten().collect()
}

pub fn default_pool() -> Vec<String> {
    vec![
        "pool example alpha".into(),
        "pool example beta".into(),
        "pool example gamma".into(),
        "pool example delta".into(),
    ]
}
