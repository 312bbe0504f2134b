//! Run reports projected from the trace: one row per accepted step plus the
//! baseline, renderable as CSV or passed through as JSONL.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::trace::{RunTrace, TraceEvent};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub step: u32,
    pub validation_accuracy: f64,
    pub gate_failures_so_far: u32,
    pub total_calls: u64,
}

/// Derived purely from the trace; `truncated` marks traces that never
/// reached a converged event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub rows: Vec<ReportRow>,
    pub truncated: bool,
}

pub fn report_from_trace(trace: &RunTrace) -> RunReport {
    let mut rows = Vec::new();
    let mut gate_failures: u32 = 0;
    let mut accepted: u32 = 0;
    for record in &trace.records {
        match &record.event {
            TraceEvent::InitPromptGenerated {
                validation_accuracy,
                total_calls,
                ..
            } => rows.push(ReportRow {
                step: 0,
                validation_accuracy: *validation_accuracy,
                gate_failures_so_far: gate_failures,
                total_calls: *total_calls,
            }),
            TraceEvent::GateFailed { .. } => gate_failures += 1,
            TraceEvent::StepAccepted {
                validation_accuracy,
                total_calls,
                ..
            } => {
                accepted += 1;
                rows.push(ReportRow {
                    step: accepted,
                    validation_accuracy: *validation_accuracy,
                    gate_failures_so_far: gate_failures,
                    total_calls: *total_calls,
                });
            }
            _ => {}
        }
    }
    RunReport {
        rows,
        truncated: !trace.is_complete(),
    }
}

/// CSV with a fixed header, `.` decimal separator, LF line endings. A
/// truncated run gains one trailing comment line as a marker.
pub fn write_csv(report: &RunReport, out: &mut dyn Write) -> Result<()> {
    out.write_all(b"step,validation_accuracy,gate_failures_so_far,total_calls\n")?;
    for row in &report.rows {
        out.write_all(
            format!(
                "{},{},{},{}\n",
                row.step, row.validation_accuracy, row.gate_failures_so_far, row.total_calls
            )
            .as_bytes(),
        )?;
    }
    if report.truncated {
        out.write_all(b"# truncated run: trace ended without a converged event\n")?;
    }
    Ok(())
}

/// JSONL passthrough of the raw trace records.
pub fn write_jsonl(trace: &RunTrace, out: &mut dyn Write) -> Result<()> {
    out.write_all(trace.to_jsonl().as_bytes())?;
    Ok(())
}
