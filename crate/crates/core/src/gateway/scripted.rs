//! Deterministic backend that replays canned responses in order, one queue
//! per call purpose. The workhorse of golden tests.

use std::collections::VecDeque;
use std::io::BufRead;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{EngineError, GatewayError};

use super::{CallMeter, CallPurpose, ChatBackend, ChatRequest, ChatResponse, MeterCore};

/// One line of a script file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub purpose: CallPurpose,
    pub content: String,
}

#[derive(Debug, Default)]
struct Queues {
    initialize: VecDeque<String>,
    expand: VecDeque<String>,
    predict: VecDeque<String>,
}

impl Queues {
    fn queue(&mut self, purpose: CallPurpose) -> &mut VecDeque<String> {
        match purpose {
            CallPurpose::Initialize => &mut self.initialize,
            CallPurpose::Expand => &mut self.expand,
            CallPurpose::Predict => &mut self.predict,
        }
    }
}

/// Replays scripted responses by call order within each purpose channel.
/// Request content is ignored on purpose: scripts stay stable even though
/// request text contains model-generated material.
pub struct ScriptedBackend {
    queues: Mutex<Queues>,
    meter: MeterCore,
}

impl ScriptedBackend {
    pub fn new(entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        let mut queues = Queues::default();
        for e in entries {
            queues.queue(e.purpose).push_back(e.content);
        }
        Self {
            queues: Mutex::new(queues),
            meter: MeterCore::default(),
        }
    }

    /// Read a JSONL script: one `{"purpose": ..., "content": ...}` per line.
    pub fn from_jsonl(reader: impl BufRead) -> Result<Self, EngineError> {
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptEntry = serde_json::from_str(&line).map_err(|e| EngineError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            entries.push(entry);
        }
        Ok(Self::new(entries))
    }

    /// Number of unconsumed entries across all purposes.
    pub fn remaining(&self) -> usize {
        let q = self.queues.lock().expect("script queues poisoned");
        q.initialize.len() + q.expand.len() + q.predict.len()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest, purpose: CallPurpose) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let mut queues = self.queues.lock().expect("script queues poisoned");
        match queues.queue(purpose).pop_front() {
            Some(content) => {
                self.meter.record(purpose);
                Ok(ChatResponse::text(content))
            }
            None => Err(GatewayError::ScriptExhausted {
                purpose: purpose.as_str(),
            }),
        }
    }

    fn meter(&self) -> CallMeter {
        self.meter.snapshot()
    }

    fn serial_only(&self) -> bool {
        true
    }
}
