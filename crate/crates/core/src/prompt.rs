//! The structured prompt: an ordered list of sentences with per-sentence
//! positive weights. This is the state the optimizer operates on.

use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};

/// Lower clamp for sentence weights.
pub const WEIGHT_FLOOR: f64 = 1e-6;
/// Upper clamp for sentence weights.
pub const WEIGHT_CEILING: f64 = 1e6;

/// A prompt split into sentences, each carrying a positive weight.
///
/// Equality is defined over the sentence list alone; weights and the step
/// index are bookkeeping and do not participate in comparisons.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StructuredPrompt {
    sentences: Vec<String>,
    weights: Vec<f64>,
    step_index: u32,
}

impl PartialEq for StructuredPrompt {
    fn eq(&self, other: &Self) -> bool {
        self.sentences == other.sentences
    }
}

impl StructuredPrompt {
    /// Build a prompt, validating every invariant.
    pub fn new(sentences: Vec<String>, weights: Vec<f64>, step_index: u32) -> Result<Self> {
        if sentences.is_empty() {
            return Err(EngineError::Validation(
                "a prompt needs at least one sentence".into(),
            ));
        }
        if weights.len() != sentences.len() {
            return Err(EngineError::Validation(format!(
                "weight count {} does not match sentence count {}",
                weights.len(),
                sentences.len()
            )));
        }
        if let Some(s) = sentences.iter().find(|s| s.trim().is_empty()) {
            return Err(EngineError::Validation(format!(
                "sentence {s:?} is empty after trimming"
            )));
        }
        if let Some(w) = weights
            .iter()
            .find(|w| !w.is_finite() || **w < WEIGHT_FLOOR || **w > WEIGHT_CEILING)
        {
            return Err(EngineError::Validation(format!(
                "weight {w} outside [{WEIGHT_FLOOR}, {WEIGHT_CEILING}]"
            )));
        }
        Ok(Self {
            sentences,
            weights,
            step_index,
        })
    }

    /// Build a prompt with all weights set to 1 and step index 0.
    pub fn with_unit_weights(sentences: Vec<String>) -> Result<Self> {
        let weights = vec![1.0; sentences.len()];
        Self::new(sentences, weights, 0)
    }

    pub fn sentences(&self) -> &[String] {
        &self.sentences
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of sentences.
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        false // invariant: at least one sentence
    }

    pub fn step_index(&self) -> u32 {
        self.step_index
    }

    /// Copy of the prompt with a new step index.
    pub fn at_step(&self, step_index: u32) -> Self {
        Self {
            step_index,
            ..self.clone()
        }
    }

    /// Copy of the prompt with one weight replaced (clamped into bounds).
    pub fn with_weight(&self, index: usize, weight: f64) -> Result<Self> {
        if index >= self.len() {
            return Err(EngineError::IndexOutOfRange {
                index,
                len: self.len(),
            });
        }
        let mut weights = self.weights.clone();
        weights[index] = weight.clamp(WEIGHT_FLOOR, WEIGHT_CEILING);
        Self::new(self.sentences.clone(), weights, self.step_index)
    }
}

/// Join the sentences in order, inserting a single space between segments
/// that do not already end in whitespace. Deterministic and idempotent.
pub fn render(prompt: &StructuredPrompt) -> String {
    let mut out = String::new();
    for sentence in prompt.sentences() {
        if !out.is_empty() && !out.ends_with(char::is_whitespace) {
            out.push(' ');
        }
        out.push_str(sentence);
    }
    out
}

/// New prompt identical to `prompt` except `sentences[index]` is `revised`.
/// Weights, order, and length are untouched.
pub fn replace_sentence(
    prompt: &StructuredPrompt,
    index: usize,
    revised: &str,
) -> Result<StructuredPrompt> {
    if index >= prompt.len() {
        return Err(EngineError::IndexOutOfRange {
            index,
            len: prompt.len(),
        });
    }
    if revised.trim().is_empty() {
        return Err(EngineError::Validation(
            "replacement sentence is empty after trimming".into(),
        ));
    }
    let mut sentences = prompt.sentences().to_vec();
    sentences[index] = revised.to_string();
    StructuredPrompt::new(sentences, prompt.weights().to_vec(), prompt.step_index())
}
