//! Input generators shared by the benchmarks.

use orthoprompt::EmbeddingMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian_matrix(seed: u64, rows: usize, cols: usize) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    EmbeddingMatrix::new(rows, cols, data).expect("finite gaussian samples")
}
