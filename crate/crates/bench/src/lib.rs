//! Shared fixtures for the benchmarks.

use styleeq_core::synthglyph::{make_dataset, DatasetConfig, StyleSampler};
use styleeq_core::LabeledSample;

/// Noiseless samples of `min_len..=max_len` glyphs.
pub fn samples(n: usize, min_len: usize, max_len: usize) -> Vec<LabeledSample> {
    let style = StyleSampler { jitter: (0.0, 0.0), drift: (0.0, 0.0), ..StyleSampler::default() };
    make_dataset(&DatasetConfig { num_samples: n, alphabet_size: 10, min_len, max_len, style, seed: 11 }).expect("valid config")
}
