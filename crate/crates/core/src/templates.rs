//! Meta-instruction wording. The text lives in template files so it can be
//! tuned without touching code; embedded copies serve as the defaults.

use std::path::Path;

use crate::error::{EngineError, Result};

/// Placeholder replaced by the serialized exemplar blocks.
pub const EXEMPLARS_PLACEHOLDER: &str = "{{EXEMPLARS}}";
/// Placeholders of the expansion instruction.
pub const CURRENT_PROMPT_PLACEHOLDER: &str = "{{CURRENT_PROMPT}}";
pub const FAILURES_PLACEHOLDER: &str = "{{FAILURES}}";
pub const TARGET_SENTENCE_PLACEHOLDER: &str = "{{TARGET_SENTENCE}}";

const SCHEMA_DEFAULTS: [&str; 4] = [
    include_str!("../templates/schema_level_1.txt"),
    include_str!("../templates/schema_level_2.txt"),
    include_str!("../templates/schema_level_3.txt"),
    include_str!("../templates/schema_level_4.txt"),
];
const EXPANSION_DEFAULT: &str = include_str!("../templates/expansion.txt");

/// The initialization templates (one per schema level) plus the expansion
/// instruction.
#[derive(Debug, Clone)]
pub struct PromptTemplates {
    schema: [String; 4],
    expansion: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            schema: SCHEMA_DEFAULTS.map(str::to_string),
            expansion: EXPANSION_DEFAULT.to_string(),
        }
    }
}

impl PromptTemplates {
    /// Load overrides from a directory holding `schema_level_{1..4}.txt` and
    /// `expansion.txt`. Missing files keep their embedded defaults.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut templates = Self::default();
        for level in 1..=4usize {
            let path = dir.join(format!("schema_level_{level}.txt"));
            if path.exists() {
                templates.schema[level - 1] = read_template(&path)?;
            }
        }
        let expansion = dir.join("expansion.txt");
        if expansion.exists() {
            templates.expansion = read_template(&expansion)?;
        }
        templates.validate()?;
        Ok(templates)
    }

    pub fn schema_template(&self, level: u8) -> Result<&str> {
        match level {
            1..=4 => Ok(&self.schema[level as usize - 1]),
            _ => Err(EngineError::Validation(format!(
                "schema level {level} outside 1..=4"
            ))),
        }
    }

    pub fn expansion_template(&self) -> &str {
        &self.expansion
    }

    fn validate(&self) -> Result<()> {
        for (i, t) in self.schema.iter().enumerate() {
            if !t.contains(EXEMPLARS_PLACEHOLDER) {
                return Err(EngineError::Validation(format!(
                    "schema level {} template lacks {EXEMPLARS_PLACEHOLDER}",
                    i + 1
                )));
            }
        }
        for placeholder in [
            CURRENT_PROMPT_PLACEHOLDER,
            FAILURES_PLACEHOLDER,
            TARGET_SENTENCE_PLACEHOLDER,
        ] {
            if !self.expansion.contains(placeholder) {
                return Err(EngineError::Validation(format!(
                    "expansion template lacks {placeholder}"
                )));
            }
        }
        Ok(())
    }
}

fn read_template(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| {
        EngineError::Data(format!("cannot read template {}: {e}", path.display()))
    })
}
