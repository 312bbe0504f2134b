//! JSONL dataset loading and train/validation/test splitting.

use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{EngineError, Result};
use crate::example::{DatasetBundle, TaskExample};
use crate::text::normalize_input_key;

/// How to turn one file (or three) into a bundle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AutoSplit {
    /// Fraction of all records held out for testing.
    pub test_fraction: f64,
    /// Fraction of the remaining records used for validation.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for AutoSplit {
    fn default() -> Self {
        Self {
            test_fraction: 0.5,
            validation_fraction: 0.5,
            seed: 0,
        }
    }
}

#[derive(Deserialize)]
struct RawRecord {
    input: String,
    output: String,
    #[serde(default)]
    choices: Option<Vec<String>>,
}

/// Read a JSONL file of `{"input", "output", "choices"?}` records.
pub fn load_examples(path: &Path) -> Result<Vec<TaskExample>> {
    let file = std::fs::File::open(path)
        .map_err(|e| EngineError::Data(format!("cannot open {}: {e}", path.display())))?;
    let reader = std::io::BufReader::new(file);
    let mut examples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| EngineError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let example = TaskExample::with_choices(raw.input, raw.output, raw.choices)
            .map_err(|e| EngineError::Data(format!("record {}: {e}", i + 1)))?;
        examples.push(example);
    }
    Ok(examples)
}

/// Load one file and split it: a seeded shuffle, `test_fraction` for test,
/// and the remainder divided between validation and the exemplar pool. Pool
/// entries whose normalized input also appears in validation are dropped so
/// the bundle invariant holds even for files with duplicate inputs.
pub fn load_dataset(path: &Path, split: &AutoSplit) -> Result<DatasetBundle> {
    let examples = load_examples(path)?;
    split_examples(examples, split)
}

/// Deterministic split of in-memory examples; behaves like [`load_dataset`].
pub fn split_examples(mut examples: Vec<TaskExample>, split: &AutoSplit) -> Result<DatasetBundle> {
    if examples.is_empty() {
        return Err(EngineError::Data("dataset is empty".into()));
    }
    if !(0.0..1.0).contains(&split.test_fraction)
        || !(0.0..1.0).contains(&split.validation_fraction)
    {
        return Err(EngineError::Validation(
            "split fractions must lie in [0, 1)".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(split.seed);
    examples.shuffle(&mut rng);

    let n = examples.len();
    let test_n = (n as f64 * split.test_fraction).floor() as usize;
    let rest = n - test_n;
    let val_n = ((rest as f64) * split.validation_fraction).round() as usize;
    let val_n = val_n.max(1).min(rest);

    let test = examples.split_off(n - test_n);
    let validation = examples.split_off(examples.len() - val_n);
    let mut pool = examples;

    let val_keys: std::collections::HashSet<String> = validation
        .iter()
        .map(|e| normalize_input_key(&e.input))
        .collect();
    pool.retain(|e| !val_keys.contains(&normalize_input_key(&e.input)));

    DatasetBundle::new(pool, validation, test)
}

/// Load pre-split files verbatim (no shuffling); bundle invariants still
/// apply and violations surface as data errors.
pub fn load_presplit(train: &Path, validation: &Path, test: &Path) -> Result<DatasetBundle> {
    DatasetBundle::new(
        load_examples(train)?,
        load_examples(validation)?,
        load_examples(test)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_jsonl(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(f, "{line}").unwrap();
        }
        f
    }

    fn records(n: usize) -> Vec<String> {
        (0..n)
            .map(|i| format!("{{\"input\":\"question {i}\",\"output\":\"yes\"}}"))
            .collect()
    }

    #[test]
    fn auto_split_hits_documented_proportions() {
        let f = write_jsonl(&records(100));
        let bundle = load_dataset(f.path(), &AutoSplit::default()).unwrap();
        assert_eq!(bundle.test.len(), 50);
        assert_eq!(bundle.validation.len(), 25);
        assert_eq!(bundle.exemplar_pool.len(), 25);
    }

    #[test]
    fn auto_split_is_a_pure_function_of_bytes_and_seed() {
        let f = write_jsonl(&records(40));
        let a = load_dataset(f.path(), &AutoSplit::default()).unwrap();
        let b = load_dataset(f.path(), &AutoSplit::default()).unwrap();
        assert_eq!(a.validation, b.validation);
        assert_eq!(a.test, b.test);
        assert_eq!(a.exemplar_pool, b.exemplar_pool);
        let c = load_dataset(
            f.path(),
            &AutoSplit {
                seed: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert_ne!(a.validation, c.validation);
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let mut lines = records(3);
        lines.insert(1, "{not json".into());
        let f = write_jsonl(&lines);
        match load_examples(f.path()) {
            Err(EngineError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn gold_outside_choices_names_the_record() {
        let lines = vec![
            "{\"input\":\"q1\",\"output\":\"A\",\"choices\":[\"A\",\"B\"]}".to_string(),
            "{\"input\":\"q2\",\"output\":\"Z\",\"choices\":[\"A\",\"B\"]}".to_string(),
        ];
        let f = write_jsonl(&lines);
        match load_examples(f.path()) {
            Err(EngineError::Data(msg)) => assert!(msg.contains("record 2"), "{msg}"),
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn presplit_files_are_used_verbatim() {
        let train = write_jsonl(&records(3));
        let val = write_jsonl(&[
            "{\"input\":\"held out 1\",\"output\":\"y\"}".to_string(),
            "{\"input\":\"held out 2\",\"output\":\"y\"}".to_string(),
        ]);
        let test = write_jsonl(&[]);
        let bundle = load_presplit(train.path(), val.path(), test.path()).unwrap();
        assert_eq!(bundle.exemplar_pool.len(), 3);
        assert_eq!(bundle.validation.len(), 2);
        assert!(bundle.test.is_empty());
        assert_eq!(bundle.exemplar_pool[0].input, "question 0"); // no shuffling
    }

    #[test]
    fn duplicate_inputs_are_dropped_from_the_pool() {
        let mut lines = records(10);
        lines.push("{\"input\":\"question 0\",\"output\":\"yes\"}".into());
        let f = write_jsonl(&lines);
        let bundle = load_dataset(
            f.path(),
            &AutoSplit {
                test_fraction: 0.2,
                ..Default::default()
            },
        )
        .unwrap();
        let val_keys: std::collections::HashSet<_> = bundle
            .validation
            .iter()
            .map(|e| normalize_input_key(&e.input))
            .collect();
        assert!(bundle
            .exemplar_pool
            .iter()
            .all(|e| !val_keys.contains(&normalize_input_key(&e.input))));
    }
}
