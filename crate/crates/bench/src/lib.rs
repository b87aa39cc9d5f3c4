//! Shared fixtures for the criterion benches: a small but realistically
//! shaped model plus deterministic synthetic batches.

use proplm::model::{ModelConfig, Parameters};
use proplm::tokenizer::CLS;

pub const VOCAB_SIZE: usize = 128;

pub fn bench_config() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        d_model: 64,
        n_heads: 4,
        d_ff: 192,
        vocab_size: VOCAB_SIZE,
        max_seq_len: 32,
        dropout_rate: 0.0,
    }
}

pub fn bench_params() -> Parameters<f32> {
    Parameters::init(bench_config(), 7).expect("bench config is valid")
}

/// Deterministic pseudo-token windows; a cheap LCG keeps ids off the special
/// range without pulling in an RNG crate.
pub fn token_windows(count: usize, len: usize) -> Vec<Vec<u32>> {
    let mut state = 0x2545_f491u64;
    let mut next = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        8 + (state >> 33) as u32 % (VOCAB_SIZE as u32 - 8)
    };
    (0..count).map(|_| (0..len).map(|_| next()).collect()).collect()
}

/// Proposition-shaped batches: token body ending in [cls], alternating labels.
pub fn proposition_batch(count: usize, len: usize) -> Vec<(Vec<u32>, bool)> {
    token_windows(count, len.saturating_sub(1))
        .into_iter()
        .enumerate()
        .map(|(i, mut ids)| {
            ids.push(CLS);
            (ids, i % 2 == 0)
        })
        .collect()
}
