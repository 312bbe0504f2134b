//! Phase one: pick exemplars, build the meta-instruction for the configured
//! schema level, ask the backend for an initial prompt, and segment it into
//! sentences with unit weights.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::OptimizerConfig;
use crate::error::{EngineError, Result};
use crate::example::TaskExample;
use crate::gateway::{CallPurpose, ChatBackend, ChatMessage, ChatRequest};
use crate::prompt::StructuredPrompt;
use crate::templates::{PromptTemplates, EXEMPLARS_PLACEHOLDER};
use crate::text::{normalize_input_key, strip_markdown_fences, strip_wrapping_quotes};

/// Stream separation constant: exemplar shuffling must not consume draws
/// from the optimizer's sentence-sampling stream.
const EXEMPLAR_SEED_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

/// A deduplicated, ordered set of exemplars.
#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarSet {
    examples: Vec<TaskExample>,
}

impl ExemplarSet {
    pub fn new(examples: Vec<TaskExample>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for e in &examples {
            if !seen.insert(normalize_input_key(&e.input)) {
                return Err(EngineError::Validation(format!(
                    "duplicate exemplar input {:?}",
                    e.input
                )));
            }
        }
        Ok(Self { examples })
    }

    pub fn examples(&self) -> &[TaskExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Result of exemplar selection; `shortfall` is set when the pool held fewer
/// unique inputs than requested.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectedExemplars {
    pub set: ExemplarSet,
    pub shortfall: bool,
}

/// Keep the first occurrence of every distinct input, shuffle those with a
/// seeded generator, and take the first `count`. Deduplicating before the
/// shuffle keeps the outcome independent of duplicate pool entries beyond
/// their first occurrence.
pub fn select_exemplars(
    pool: &[TaskExample],
    count: usize,
    seed: u64,
) -> Result<SelectedExemplars> {
    if pool.is_empty() {
        return Err(EngineError::EmptyPool);
    }
    if count < 1 {
        return Err(EngineError::Validation("exemplar count must be >= 1".into()));
    }
    let mut seen = std::collections::HashSet::new();
    let mut unique: Vec<&TaskExample> = Vec::new();
    for example in pool {
        if seen.insert(normalize_input_key(&example.input)) {
            unique.push(example);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ EXEMPLAR_SEED_SALT);
    unique.shuffle(&mut rng);

    let kept: Vec<TaskExample> = unique.into_iter().take(count).cloned().collect();
    let shortfall = kept.len() < count;
    Ok(SelectedExemplars {
        set: ExemplarSet::new(kept)?,
        shortfall,
    })
}

/// Serialize exemplars as numbered input/output blocks.
pub fn serialize_exemplars(set: &ExemplarSet) -> String {
    let mut out = String::new();
    for (i, e) in set.examples().iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!(
            "Example {}:\nInput: {}\nOutput: {}\n",
            i + 1,
            e.input,
            e.gold
        ));
    }
    out
}

/// Instantiate the meta-instruction for a schema level. Deterministic for
/// fixed arguments.
pub fn build_meta_instruction(
    schema_level: u8,
    exemplars: &ExemplarSet,
    templates: &PromptTemplates,
) -> Result<String> {
    let template = templates.schema_template(schema_level)?;
    Ok(template.replace(EXEMPLARS_PLACEHOLDER, &serialize_exemplars(exemplars)))
}

/// Ask the backend to write the initial prompt, then clean and segment it.
/// One automatic retry on a degenerate reply, then the run aborts.
pub fn generate_initial_prompt(
    backend: &dyn ChatBackend,
    meta_instruction: &str,
    config: &OptimizerConfig,
) -> Result<StructuredPrompt> {
    for _ in 0..2 {
        let request = ChatRequest {
            system: None,
            messages: vec![ChatMessage::user(meta_instruction)],
            temperature: config.generate_temperature,
            max_tokens: None,
        };
        let reply = backend.complete(&request, CallPurpose::Initialize)?;
        let cleaned = strip_wrapping_quotes(&strip_markdown_fences(&reply.content)).to_string();
        let sentences = segment_sentences(&cleaned);
        if !sentences.is_empty() {
            return StructuredPrompt::with_unit_weights(sentences);
        }
    }
    Err(EngineError::DegeneratePrompt)
}

/// Abbreviations whose trailing period does not end a sentence. Compared
/// case-insensitively against the token before the period (with its own
/// internal periods kept, so "e.g." matches as "e.g").
const ABBREVIATIONS: [&str; 10] = [
    "e.g", "i.e", "etc", "vs", "cf", "dr", "mr", "mrs", "ms", "prof",
];

/// Split text into sentences: newline boundaries first, then terminal
/// punctuation (`.`, `!`, `?`) followed by whitespace, with the punctuation
/// kept on its sentence. A period directly after a single letter or a known
/// abbreviation does not split. Segments with fewer than three
/// non-whitespace characters that do not themselves end in `?` or `!`
/// (enumerators like "1.") are merged into the preceding segment, or the
/// following one when first.
pub fn segment_sentences(text: &str) -> Vec<String> {
    let mut segments: Vec<String> = Vec::new();
    for line in text.lines() {
        let mut line_segments = Vec::new();
        split_line(line, &mut line_segments);
        // Newlines are hard boundaries: fragments merge within their line.
        segments.extend(merge_short_segments(line_segments));
    }
    segments
}

fn split_line(line: &str, out: &mut Vec<String>) {
    let chars: Vec<char> = line.chars().collect();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        if matches!(chars[i], '.' | '!' | '?') {
            // absorb a run of terminal punctuation ("?!", "...")
            let mut end = i;
            while end + 1 < chars.len() && matches!(chars[end + 1], '.' | '!' | '?') {
                end += 1;
            }
            let followed_by_ws = end + 1 < chars.len() && chars[end + 1].is_whitespace();
            let lone_period = end == i && chars[i] == '.';
            let guarded = lone_period && abbreviation_guard(&chars[start..i]);
            if followed_by_ws && !guarded {
                push_trimmed(&chars[start..=end], out);
                start = end + 1;
            }
            i = end + 1;
        } else {
            i += 1;
        }
    }
    if start < chars.len() {
        push_trimmed(&chars[start..], out);
    }
}

fn push_trimmed(chars: &[char], out: &mut Vec<String>) {
    let s: String = chars.iter().collect();
    let t = s.trim();
    if !t.is_empty() {
        out.push(t.to_string());
    }
}

/// True when the token ending at the period is a known abbreviation, or is
/// a single letter or digit that opens the segment (initials and list
/// markers like "J." or "1."). A single letter deeper in the segment, as in
/// "Do X.", still ends the sentence.
fn abbreviation_guard(before: &[char]) -> bool {
    let segment: String = before.iter().collect();
    let segment = segment.trim();
    let mut seg_chars = segment.chars();
    if let (Some(c), None) = (seg_chars.next(), seg_chars.next()) {
        if c.is_alphanumeric() {
            return true;
        }
    }
    let token_start = before
        .iter()
        .rposition(|c| c.is_whitespace())
        .map(|p| p + 1)
        .unwrap_or(0);
    let token: String = before[token_start..].iter().collect();
    let token = token.trim_matches(|c: char| !c.is_alphanumeric() && c != '.');
    if token.is_empty() {
        return false;
    }
    let lowered = token.to_lowercase();
    ABBREVIATIONS.iter().any(|a| *a == lowered)
}

fn is_mergeable_fragment(segment: &str) -> bool {
    segment.chars().filter(|c| !c.is_whitespace()).count() < 3
        && !segment.ends_with(['?', '!'])
}

fn merge_short_segments(mut segments: Vec<String>) -> Vec<String> {
    let mut i = 0;
    while i < segments.len() {
        if segments.len() > 1 && is_mergeable_fragment(&segments[i]) {
            if i == 0 {
                let first = segments.remove(0);
                segments[0] = format!("{} {}", first, segments[0]);
            } else {
                let fragment = segments.remove(i);
                segments[i - 1] = format!("{} {}", segments[i - 1], fragment);
                i -= 1;
            }
        } else {
            i += 1;
        }
    }
    segments
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ScriptedBackend;
    use crate::text::collapse_whitespace;
    use proptest::prelude::*;

    fn ex(input: &str) -> TaskExample {
        TaskExample::new(input, "label").unwrap()
    }

    #[test]
    fn segments_on_terminal_punctuation() {
        assert_eq!(
            segment_sentences("A is true. B? C!"),
            vec!["A is true.", "B?", "C!"]
        );
    }

    #[test]
    fn no_delimiter_means_one_segment() {
        assert_eq!(
            segment_sentences("One sentence without terminal punctuation"),
            vec!["One sentence without terminal punctuation"]
        );
    }

    #[test]
    fn enumerators_merge_into_their_sentence() {
        assert_eq!(
            segment_sentences("1. Do X.\n2. Do Y."),
            vec!["1. Do X.", "2. Do Y."]
        );
    }

    #[test]
    fn abbreviations_and_initials_do_not_split() {
        assert_eq!(
            segment_sentences("Ignore sarcasm, e.g. irony. Answer briefly."),
            vec!["Ignore sarcasm, e.g. irony.", "Answer briefly."]
        );
        assert_eq!(
            segment_sentences("J. Smith replied fast. Decide the genre."),
            vec!["J. Smith replied fast.", "Decide the genre."]
        );
        // a single letter deeper in the segment still ends the sentence
        assert_eq!(
            segment_sentences("Do X. Also do Y."),
            vec!["Do X.", "Also do Y."]
        );
    }

    #[test]
    fn decimals_do_not_split() {
        assert_eq!(
            segment_sentences("Use a 0.5 threshold. Then answer."),
            vec!["Use a 0.5 threshold.", "Then answer."]
        );
    }

    #[test]
    fn empty_input_yields_empty_list() {
        assert!(segment_sentences("").is_empty());
        assert!(segment_sentences("  \n\t ").is_empty());
    }

    #[test]
    fn punctuation_runs_stay_together() {
        assert_eq!(segment_sentences("Wait?! Go on."), vec!["Wait?!", "Go on."]);
    }

    proptest! {
        /// Joining the segments with single spaces and collapsing whitespace
        /// reproduces the whitespace-collapsed input.
        #[test]
        fn segmentation_is_a_partition(s in "[ -~\\n\\t]{0,200}") {
            let joined = segment_sentences(&s).join(" ");
            prop_assert_eq!(collapse_whitespace(&joined), collapse_whitespace(&s));
        }
    }

    #[test]
    fn select_keeps_count_distinct_examples() {
        let pool: Vec<TaskExample> = (0..20).map(|i| ex(&format!("input {i}"))).collect();
        let selected = select_exemplars(&pool, 8, 42).unwrap();
        assert_eq!(selected.set.len(), 8);
        assert!(!selected.shortfall);
        let keys: std::collections::HashSet<_> = selected
            .set
            .examples()
            .iter()
            .map(|e| normalize_input_key(&e.input))
            .collect();
        assert_eq!(keys.len(), 8);
    }

    #[test]
    fn select_skips_duplicate_inputs() {
        let pool = vec![ex("alpha"), ex("ALPHA"), ex("beta")];
        let selected = select_exemplars(&pool, 2, 1).unwrap();
        assert_eq!(selected.set.len(), 2);
        let keys: Vec<String> = selected
            .set
            .examples()
            .iter()
            .map(|e| normalize_input_key(&e.input))
            .collect();
        assert!(keys.contains(&"alpha".to_string()));
        assert!(keys.contains(&"beta".to_string()));
    }

    #[test]
    fn select_flags_shortfall_when_pool_is_small() {
        let pool = vec![ex("a1"), ex("b2"), ex("c3")];
        let selected = select_exemplars(&pool, 8, 0).unwrap();
        assert_eq!(selected.set.len(), 3);
        assert!(selected.shortfall);
        assert!(matches!(
            select_exemplars(&[], 4, 0),
            Err(EngineError::EmptyPool)
        ));
    }

    #[test]
    fn select_is_invariant_to_extra_duplicates() {
        let base = vec![ex("a1"), ex("b2"), ex("c3"), ex("d4")];
        let mut padded = base.clone();
        padded.insert(2, ex("A1")); // duplicate beyond first occurrence
        padded.push(ex("b2"));
        for seed in 0..16 {
            let lhs = select_exemplars(&base, 3, seed).unwrap();
            let rhs = select_exemplars(&padded, 3, seed).unwrap();
            assert_eq!(lhs, rhs, "seed {seed}");
        }
    }

    #[test]
    fn meta_instruction_embeds_all_exemplars_and_is_deterministic() {
        let set = ExemplarSet::new(vec![ex("first input"), ex("second input")]).unwrap();
        let templates = PromptTemplates::default();
        let t1 = build_meta_instruction(1, &set, &templates).unwrap();
        assert!(t1.contains("task type"));
        assert!(!t1.contains("output format"));
        assert!(t1.contains("first input"));
        assert!(t1.contains("second input"));
        assert!(t1.contains("Example 2:"));

        let t4 = build_meta_instruction(4, &set, &templates).unwrap();
        assert!(t4.contains("professional tips"));
        assert_eq!(t4, build_meta_instruction(4, &set, &templates).unwrap());
    }

    fn scripted_init(reply: &str) -> ScriptedBackend {
        ScriptedBackend::new(vec![crate::gateway::ScriptEntry {
            purpose: CallPurpose::Initialize,
            content: reply.into(),
        }])
    }

    #[test]
    fn initial_prompt_gets_unit_weights() {
        let backend = scripted_init(
            "Classify sentiment. Answer with positive or negative. Think step by step. Ignore sarcasm markers.",
        );
        let config = OptimizerConfig::default();
        let p = generate_initial_prompt(&backend, "meta", &config).unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!(p.weights(), [1.0, 1.0, 1.0, 1.0]);
        assert_eq!(p.step_index(), 0);
    }

    #[test]
    fn initial_prompt_strips_fences() {
        let backend = scripted_init("```\nDo X. Do Y.\n```");
        let p = generate_initial_prompt(&backend, "meta", &OptimizerConfig::default()).unwrap();
        assert_eq!(p.sentences(), ["Do X.", "Do Y."]);
    }

    #[test]
    fn empty_reply_is_degenerate_after_one_retry() {
        let backend = ScriptedBackend::new(vec![
            crate::gateway::ScriptEntry {
                purpose: CallPurpose::Initialize,
                content: "".into(),
            },
            crate::gateway::ScriptEntry {
                purpose: CallPurpose::Initialize,
                content: "   ".into(),
            },
        ]);
        let err = generate_initial_prompt(&backend, "meta", &OptimizerConfig::default());
        assert!(matches!(err, Err(EngineError::DegeneratePrompt)));
        assert_eq!(backend.meter().initialize, 2); // exactly one retry
    }

    #[test]
    fn degenerate_then_good_reply_recovers() {
        let backend = ScriptedBackend::new(vec![
            crate::gateway::ScriptEntry {
                purpose: CallPurpose::Initialize,
                content: "\"\"".into(),
            },
            crate::gateway::ScriptEntry {
                purpose: CallPurpose::Initialize,
                content: "Solid prompt sentence.".into(),
            },
        ]);
        let p = generate_initial_prompt(&backend, "meta", &OptimizerConfig::default()).unwrap();
        assert_eq!(p.sentences(), ["Solid prompt sentence."]);
    }
}
