//! Seeded fixtures shared by the benchmarks in `benches/`.

use dgq_core::attention::{attention_scores, AttentionScores};
use dgq_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `rows x cols` plane of values in [-3, 3) with two large opposite-sign channels.
pub fn outlier_plane(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols)
        .map(|i| {
            let n: f32 = rng.gen_range(-3.0..3.0);
            match i % cols {
                0 => 30.0 + n,
                1 => -30.0 + n,
                _ => n,
            }
        })
        .collect();
    Tensor::from_matrix(rows, cols, data).expect("shape matches")
}

/// Per-vector (min, max) pairs spread over a few range profiles.
pub fn ranges(n: usize, seed: u64) -> (Vec<f32>, Vec<f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let width = [1.0f32, 4.0, 20.0, 60.0][i % 4];
            let lo = -width * rng.gen_range(0.4..0.6);
            (lo, lo + width * rng.gen_range(0.9..1.1))
        })
        .unzip()
}

/// Softmax scores of random queries against random keys, key 0 as `<start>`.
pub fn attention(n_q: usize, n_k: usize, seed: u64) -> AttentionScores {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut matrix = |rows: usize| {
        let data = (0..rows * 32)
            .map(|_| rng.gen_range(-1.0f32..1.0))
            .collect();
        Tensor::from_matrix(rows, 32, data).expect("shape matches")
    };
    let (q, k) = (matrix(n_q), matrix(n_k));
    attention_scores(&q, &k)
        .and_then(|a| a.with_start_token(true))
        .expect("valid scores")
}
