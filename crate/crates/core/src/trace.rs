//! Append-only run trace. Every decision the engine makes lands here, which
//! makes runs replayable, auditable, and byte-for-byte comparable.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};

/// Which acceptance gate rejected a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateKind {
    Failure,
    Validation,
}

/// Why a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvergenceReason {
    /// The accepted-step budget was spent.
    StepBudget,
    /// Gate failures accumulated to the limit.
    FailureLimit,
    /// The current prompt answers every validation example correctly.
    PerfectValidation,
}

/// One logged engine event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum TraceEvent {
    /// Emitted once the initial prompt exists and has been scored on the
    /// validation set. The failure gate treats the incumbent's score on its
    /// own failure set as zero by construction; the flag records that.
    InitPromptGenerated {
        sentences: Vec<String>,
        weights: Vec<f64>,
        /// Exemplar inputs in serialization order (the seeded selection
        /// order), so the initialization is replayable from the trace.
        exemplar_inputs: Vec<String>,
        validation_accuracy: f64,
        failure_count: usize,
        total_calls: u64,
        failure_baseline_assumed_zero: bool,
    },
    SentenceSampled {
        index: usize,
        probabilities: Vec<f64>,
    },
    RevisionProposed {
        original: String,
        revised: String,
    },
    /// The expansion produced a blacklisted or malformed revision.
    BlacklistHit {
        revision: String,
    },
    GateFailed {
        gate: GateKind,
        delta: f64,
    },
    StepAccepted {
        weights_after: Vec<f64>,
        validation_accuracy: f64,
        failure_count: usize,
        total_calls: u64,
    },
    Converged {
        reason: ConvergenceReason,
    },
    CallAccounting {
        total_calls: u64,
        initialize: u64,
        expand: u64,
        predict: u64,
    },
}

/// An event with its position in the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub seq: u64,
    pub step: u32,
    #[serde(flatten)]
    pub event: TraceEvent,
}

/// The full event log of one run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
}

impl RunTrace {
    /// Check the structural invariants: strictly increasing sequence numbers
    /// and exactly one `Converged` event in final position.
    pub fn validate(&self) -> Result<()> {
        let mut last_seq: Option<u64> = None;
        for r in &self.records {
            if let Some(prev) = last_seq {
                if r.seq <= prev {
                    return Err(EngineError::Validation(format!(
                        "trace sequence numbers must strictly increase ({prev} then {})",
                        r.seq
                    )));
                }
            }
            last_seq = Some(r.seq);
        }
        let converged: Vec<usize> = self
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| matches!(r.event, TraceEvent::Converged { .. }))
            .map(|(i, _)| i)
            .collect();
        match converged.as_slice() {
            [last] if *last == self.records.len() - 1 => Ok(()),
            [] => Err(EngineError::Validation(
                "trace has no converged event".into(),
            )),
            _ => Err(EngineError::Validation(
                "trace must contain exactly one converged event, in final position".into(),
            )),
        }
    }

    /// True when the run ended cleanly with a `Converged` event.
    pub fn is_complete(&self) -> bool {
        matches!(
            self.records.last(),
            Some(TraceRecord {
                event: TraceEvent::Converged { .. },
                ..
            })
        )
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("trace records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: TraceRecord =
                serde_json::from_str(line).map_err(|e| EngineError::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            records.push(record);
        }
        Ok(Self { records })
    }
}

/// Collects events and, when given a writer, flushes each one as a JSONL
/// line immediately so an aborted run still leaves a valid prefix on disk.
pub struct TraceRecorder<'a> {
    records: Vec<TraceRecord>,
    next_seq: u64,
    sink: Option<&'a mut dyn Write>,
}

impl<'a> TraceRecorder<'a> {
    pub fn new(sink: Option<&'a mut dyn Write>) -> Self {
        Self {
            records: Vec::new(),
            next_seq: 0,
            sink,
        }
    }

    pub fn record(&mut self, step: u32, event: TraceEvent) -> Result<()> {
        let record = TraceRecord {
            seq: self.next_seq,
            step,
            event,
        };
        self.next_seq += 1;
        if let Some(sink) = self.sink.as_mut() {
            let line = serde_json::to_string(&record).expect("trace records serialize");
            sink.write_all(line.as_bytes())?;
            sink.write_all(b"\n")?;
            sink.flush()?;
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn into_trace(self) -> RunTrace {
        RunTrace {
            records: self.records,
        }
    }
}
