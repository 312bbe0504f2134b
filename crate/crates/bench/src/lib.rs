//! Shared fixtures for the engine benchmarks.

use promptforge::sim::{GainMean, SimTaskSpec};
use promptforge::OptimizerConfig;

/// A paragraph with the punctuation patterns segmentation has to handle.
pub const SEGMENT_FIXTURE: &str = "Classify the sentiment of the given text, e.g. a movie review. \
Answer with exactly one word: positive or negative. Think about tone, irony, and contrast before deciding. \
Watch for negations such as not bad, which flip polarity! Does the text praise or criticize? \
1. Read the text fully.\n2. Decide the dominant sentiment.\n3. Reply with the single label.";

/// Weight vectors of growing size for the softmax benchmarks.
pub fn weight_vector(len: usize) -> Vec<f64> {
    (0..len).map(|i| 1.0 + (i as f64 * 0.37).sin().abs()).collect()
}

/// Small simulated task for end-to-end run benchmarks.
pub fn bench_spec(seed: u64) -> SimTaskSpec {
    SimTaskSpec {
        sentence_count: 4,
        latent_qualities: vec![0.1; 4],
        revision_gain_mean: GainMean::Uniform(0.25),
        revision_gain_std: 0.05,
        slot_gain_spread: 0.18,
        noise_std: 0.02,
        example_count: 25,
        base_accuracy: 0.35,
        seed,
    }
}

pub fn bench_config(seed: u64) -> OptimizerConfig {
    OptimizerConfig {
        h_f: 0.03,
        h_v: 0.01,
        eta: 2.5,
        rng_seed: seed,
        eval_concurrency: 1,
        ..Default::default()
    }
}
