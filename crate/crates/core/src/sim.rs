//! Deterministic simulated task environment.
//!
//! Each prompt sentence occupies one semantic slot with a latent quality in
//! [0, 1]; the model's true accuracy is `base + mean(qualities) + noise`.
//! Slot and quality are carried inside the sentence text itself (a trailing
//! `[s<slot> q<quality>]` token), so prediction calls recover the full slot
//! state from the rendered prompt alone and stay pure per example. That is
//! what makes transcripts independent of evaluation concurrency.
//!
//! Correctness draws are coupled across prompt states: example `i` carries a
//! fixed uniform `u(i)` and is answered correctly exactly when `u(i)` falls
//! below the state's accuracy. A better prompt therefore keeps every example
//! a weaker prompt already had right, and realized accuracy moves exactly
//! with the latent accuracy.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{EngineError, GatewayError, Result};
use crate::example::{DatasetBundle, TaskExample};
use crate::gateway::{CallMeter, CallPurpose, ChatBackend, ChatRequest, ChatResponse, MeterCore};

/// Per-slot revision gain mean: one shared value or one per slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GainMean {
    Uniform(f64),
    PerSlot(Vec<f64>),
}

impl GainMean {
    pub fn for_slot(&self, slot: usize) -> f64 {
        match self {
            GainMean::Uniform(m) => *m,
            GainMean::PerSlot(v) => v.get(slot).copied().unwrap_or(0.0),
        }
    }
}

/// Parameters of the simulated task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimTaskSpec {
    /// Number of semantic slots (sentences of the initial prompt).
    pub sentence_count: usize,
    /// Initial quality of each slot, in [0, 1].
    pub latent_qualities: Vec<f64>,
    /// Mean quality change of an accepted revision.
    pub revision_gain_mean: GainMean,
    /// Spread of individual revision draws around the slot mean.
    pub revision_gain_std: f64,
    /// Persistent per-slot offset of the gain mean: each slot adds or
    /// subtracts this amount, by a seeded fair sign draw, so slots split
    /// into productive and unproductive ones while the average gain mean is
    /// unchanged. Zero keeps all slots exchangeable.
    pub slot_gain_spread: f64,
    /// Standard deviation of the per-state accuracy noise.
    pub noise_std: f64,
    /// Size of the generated validation set (the test split has the same
    /// size; the exemplar pool is fixed at [`SIM_POOL_SIZE`]).
    pub example_count: usize,
    /// Accuracy of a prompt whose slots all have quality zero.
    pub base_accuracy: f64,
    pub seed: u64,
}

impl Default for SimTaskSpec {
    fn default() -> Self {
        Self {
            sentence_count: 4,
            latent_qualities: vec![0.1; 4],
            revision_gain_mean: GainMean::Uniform(0.25),
            revision_gain_std: 0.05,
            slot_gain_spread: 0.0,
            noise_std: 0.02,
            example_count: 50,
            base_accuracy: 0.35,
            seed: 0,
        }
    }
}

impl SimTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sentence_count == 0 {
            return Err(EngineError::Validation("sentence_count must be >= 1".into()));
        }
        if self.latent_qualities.len() != self.sentence_count {
            return Err(EngineError::Validation(format!(
                "latent_qualities has {} entries for {} slots",
                self.latent_qualities.len(),
                self.sentence_count
            )));
        }
        if self.latent_qualities.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return Err(EngineError::Validation(
                "latent qualities must lie in [0, 1]".into(),
            ));
        }
        if self.example_count == 0 {
            return Err(EngineError::Validation("example_count must be >= 1".into()));
        }
        Ok(())
    }

    /// Latent accuracy of a slot-quality state, before the per-example
    /// Bernoulli realization.
    pub fn true_accuracy(&self, qualities: &[f64]) -> f64 {
        let mean: f64 = qualities.iter().sum::<f64>() / self.sentence_count as f64;
        let noise = self.noise_std * std_normal(mix(&[self.seed, TAG_NOISE, state_bits(qualities)]));
        (self.base_accuracy + mean + noise).clamp(0.0, 1.0)
    }
}

/// Exemplar pool size of generated bundles.
pub const SIM_POOL_SIZE: usize = 16;

const VALIDATION_ID_BASE: u64 = 0;
const POOL_ID_BASE: u64 = 1_000_000;
const TEST_ID_BASE: u64 = 2_000_000;

const TAG_EXAMPLE: u64 = 0x45;
const TAG_GOLD: u64 = 0x47;
const TAG_NOISE: u64 = 0x4e;
const TAG_GAIN: u64 = 0x52;
const TAG_SLOT_MEAN: u64 = 0x53;

/// Initial qualities for the schema-level ablation: the first `level` slots
/// start at 0.15, the rest at 0.05.
pub fn schema_initial_qualities(level: u8, slots: usize) -> Vec<f64> {
    (0..slots)
        .map(|i| if i < level as usize { 0.15 } else { 0.05 })
        .collect()
}

/// Generate the dataset that pairs with a [`SimBackend`] of the same spec.
pub fn make_bundle(spec: &SimTaskSpec) -> Result<DatasetBundle> {
    spec.validate()?;
    let example = |id: u64| -> Result<TaskExample> {
        TaskExample::with_choices(
            format!("Simulated input #{id}: reply yes or no."),
            gold_label(spec.seed, id),
            Some(vec!["yes".into(), "no".into()]),
        )
    };
    let validation = (0..spec.example_count as u64)
        .map(|i| example(VALIDATION_ID_BASE + i))
        .collect::<Result<Vec<_>>>()?;
    let pool = (0..SIM_POOL_SIZE as u64)
        .map(|i| example(POOL_ID_BASE + i))
        .collect::<Result<Vec<_>>>()?;
    let test = (0..spec.example_count as u64)
        .map(|i| example(TEST_ID_BASE + i))
        .collect::<Result<Vec<_>>>()?;
    DatasetBundle::new(pool, validation, test)
}

fn gold_label(seed: u64, id: u64) -> &'static str {
    if mix(&[seed, TAG_GOLD, id]) & 1 == 0 {
        "yes"
    } else {
        "no"
    }
}

fn flip(label: &str) -> &'static str {
    if label == "yes" {
        "no"
    } else {
        "yes"
    }
}

/// Backend that simulates a task model over the latent accuracy model.
pub struct SimBackend {
    spec: SimTaskSpec,
    /// Persistent per-slot gain means (global mean plus the seeded spread).
    slot_means: Vec<f64>,
    /// Revision counters keep regenerated revisions distinct; expansion
    /// calls are serial by the optimizer contract.
    revision_counters: Mutex<Vec<u64>>,
    meter: MeterCore,
}

impl SimBackend {
    pub fn new(spec: SimTaskSpec) -> Result<Self> {
        spec.validate()?;
        let slot_means = (0..spec.sentence_count)
            .map(|slot| {
                let sign = if mix(&[spec.seed, TAG_SLOT_MEAN, slot as u64]) & 1 == 0 {
                    1.0
                } else {
                    -1.0
                };
                spec.revision_gain_mean.for_slot(slot) + sign * spec.slot_gain_spread
            })
            .collect();
        Ok(Self {
            revision_counters: Mutex::new(vec![0; spec.sentence_count]),
            slot_means,
            meter: MeterCore::default(),
            spec,
        })
    }

    pub fn spec(&self) -> &SimTaskSpec {
        &self.spec
    }

    fn initial_prompt_text(&self) -> String {
        let sentences: Vec<String> = (0..self.spec.sentence_count)
            .map(|slot| sim_sentence(slot, 0, self.spec.latent_qualities[slot]))
            .collect();
        sentences.join(" ")
    }

    fn answer_prediction(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let system = request.system.as_deref().unwrap_or_default();
        let qualities = qualities_from_text(system, self.spec.sentence_count);
        let input = &request
            .messages
            .last()
            .expect("validated request has messages")
            .content;
        let id = parse_example_id(input).ok_or_else(|| {
            GatewayError::InvalidRequest(format!("input is not a simulated example: {input:?}"))
        })?;
        let p = self.spec.true_accuracy(&qualities);
        let u = u01(mix(&[self.spec.seed, TAG_EXAMPLE, id]));
        let gold = gold_label(self.spec.seed, id);
        Ok(if u < p { gold.to_string() } else { flip(gold).to_string() })
    }

    fn answer_expansion(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let message = &request
            .messages
            .last()
            .expect("validated request has messages")
            .content;
        // The expansion instruction places the target sentence last, so the
        // final slot tag in the message names the sentence being rewritten.
        let (slot, quality) = last_tag(message).ok_or_else(|| {
            GatewayError::InvalidRequest("expansion request carries no slot tag".into())
        })?;
        if slot >= self.spec.sentence_count {
            return Err(GatewayError::InvalidRequest(format!(
                "slot {slot} out of range"
            )));
        }
        let revision = {
            let mut counters = self.revision_counters.lock().expect("counters poisoned");
            counters[slot] += 1;
            counters[slot]
        };
        let delta = self.slot_means[slot]
            + self.spec.revision_gain_std
                * std_normal(mix(&[self.spec.seed, TAG_GAIN, slot as u64, revision]));
        // Qualities are floored at zero but not capped: the accuracy model
        // clamps the aggregate, not the slots.
        let new_quality = (quality + delta).max(0.0);
        Ok(sim_sentence(slot, revision, new_quality))
    }
}

impl ChatBackend for SimBackend {
    fn complete(&self, request: &ChatRequest, purpose: CallPurpose) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let content = match purpose {
            CallPurpose::Initialize => self.initial_prompt_text(),
            CallPurpose::Predict => self.answer_prediction(request)?,
            CallPurpose::Expand => self.answer_expansion(request)?,
        };
        self.meter.record(purpose);
        Ok(ChatResponse::text(content))
    }

    fn meter(&self) -> CallMeter {
        self.meter.snapshot()
    }
}

fn sim_sentence(slot: usize, revision: u64, quality: f64) -> String {
    format!("Simulated guidance for slot {slot}, revision {revision} [s{slot} q{quality:.6}].")
}

/// Scan for `[s<slot> q<quality>]` tags, returning the quality per slot.
/// Untagged slots default to zero quality.
fn qualities_from_text(text: &str, slots: usize) -> Vec<f64> {
    let mut qualities = vec![0.0; slots];
    let mut rest = text;
    while let Some((slot, quality, advanced)) = next_tag(rest) {
        if slot < slots {
            qualities[slot] = quality;
        }
        rest = advanced;
    }
    qualities
}

fn last_tag(text: &str) -> Option<(usize, f64)> {
    let mut found = None;
    let mut rest = text;
    while let Some((slot, quality, advanced)) = next_tag(rest) {
        found = Some((slot, quality));
        rest = advanced;
    }
    found
}

fn next_tag(text: &str) -> Option<(usize, f64, &str)> {
    let start = text.find("[s")?;
    let after = &text[start + 2..];
    let close = after.find(']')?;
    let body = &after[..close];
    let rest = &after[close + 1..];
    let mut parts = body.split(" q");
    let slot = parts.next()?.parse::<usize>().ok();
    let quality = parts.next().and_then(|q| q.parse::<f64>().ok());
    match (slot, quality) {
        (Some(slot), Some(quality)) => Some((slot, quality, rest)),
        // Not a well-formed tag: skip past "[s" and keep scanning.
        _ => next_tag(&text[start + 2..]),
    }
}

fn parse_example_id(input: &str) -> Option<u64> {
    let pos = input.find('#')?;
    let digits: String = input[pos + 1..]
        .chars()
        .take_while(|c| c.is_ascii_digit())
        .collect();
    digits.parse().ok()
}

fn state_bits(qualities: &[f64]) -> u64 {
    let mut acc = 0xcbf2_9ce4_8422_2325u64;
    for q in qualities {
        acc = splitmix(acc ^ q.to_bits());
    }
    acc
}

/// SplitMix64 finalizer over a word list; the deterministic randomness
/// source for the whole simulation.
fn mix(words: &[u64]) -> u64 {
    let mut acc = 0x9e37_79b9_7f4a_7c15u64;
    for w in words {
        acc = splitmix(acc ^ w.wrapping_mul(0xff51_afd7_ed55_8ccd));
    }
    splitmix(acc)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn u01(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal via Box–Muller on two hash-derived uniforms.
fn std_normal(h: u64) -> f64 {
    let u1 = u01(splitmix(h)).max(f64::MIN_POSITIVE);
    let u2 = u01(splitmix(h ^ 0xdead_beef_dead_beef));
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
