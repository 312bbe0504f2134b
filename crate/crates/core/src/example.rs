//! Task examples and the train/validation/test bundle.

use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};
use crate::text::normalize_input_key;

/// One input/output pair, optionally with a closed label set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskExample {
    pub input: String,
    pub gold: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
}

impl TaskExample {
    pub fn new(input: impl Into<String>, gold: impl Into<String>) -> Result<Self> {
        Self::with_choices(input, gold, None)
    }

    pub fn with_choices(
        input: impl Into<String>,
        gold: impl Into<String>,
        choices: Option<Vec<String>>,
    ) -> Result<Self> {
        let example = Self {
            input: input.into(),
            gold: gold.into(),
            choices,
        };
        example.validate()?;
        Ok(example)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input.trim().is_empty() {
            return Err(EngineError::Validation("example input is empty".into()));
        }
        if let Some(choices) = &self.choices {
            if !choices.iter().any(|c| c == &self.gold) {
                return Err(EngineError::Validation(format!(
                    "gold label {:?} is not among the choices {:?}",
                    self.gold, choices
                )));
            }
        }
        Ok(())
    }
}

/// Examples split into an exemplar pool, a validation set, and a test set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub exemplar_pool: Vec<TaskExample>,
    pub validation: Vec<TaskExample>,
    pub test: Vec<TaskExample>,
}

impl DatasetBundle {
    /// Build a bundle, enforcing that validation is non-empty and that no
    /// example input appears in both the pool and the validation set.
    pub fn new(
        exemplar_pool: Vec<TaskExample>,
        validation: Vec<TaskExample>,
        test: Vec<TaskExample>,
    ) -> Result<Self> {
        if validation.is_empty() {
            return Err(EngineError::Validation("validation set is empty".into()));
        }
        for e in exemplar_pool
            .iter()
            .chain(validation.iter())
            .chain(test.iter())
        {
            e.validate()?;
        }
        let val_keys: std::collections::HashSet<String> = validation
            .iter()
            .map(|e| normalize_input_key(&e.input))
            .collect();
        if let Some(dup) = exemplar_pool
            .iter()
            .find(|e| val_keys.contains(&normalize_input_key(&e.input)))
        {
            return Err(EngineError::Validation(format!(
                "example input {:?} appears in both the exemplar pool and validation",
                dup.input
            )));
        }
        Ok(Self {
            exemplar_pool,
            validation,
            test,
        })
    }
}
