//! Synthetic inputs shared by the criterion benches.

use lama_core::features::FeatureMatrix;
use lama_core::validation::OofMatrix;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Noisy binary labels and a score that ranks them imperfectly.
pub fn scored_labels(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..2) as f64).collect();
    let x = y.iter().map(|&v| v + rng.random_range(-1.5..1.5)).collect();
    (y, x)
}

/// Dense numeric features with a logistic binary target on the first few.
pub fn binary_matrix(n: usize, features: usize, seed: u64) -> (FeatureMatrix, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols: Vec<Vec<f64>> = (0..features).map(|_| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let y = (0..n)
        .map(|r| {
            let z: f64 = cols.iter().take(5).enumerate().map(|(j, c)| c[r] / (j + 1) as f64).sum();
            rng.random_bool(1.0 / (1.0 + (-z).exp())) as u8 as f64
        })
        .collect();
    let names = (0..features).map(|j| format!("f{j}")).collect();
    (FeatureMatrix::new(names, cols).expect("columns share a length"), y)
}

/// `models` probability columns of varying quality for the same labels.
pub fn oof_candidates(y: &[f64], models: usize, seed: u64) -> Vec<OofMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..models)
        .map(|m| {
            let noise = 0.5 + m as f64 * 0.4;
            let values = Array2::from_shape_fn((y.len(), 1), |(r, _)| {
                let z = (2.0 * y[r] - 1.0) + noise * rng.random_range(-2.0..2.0);
                1.0 / (1.0 + (-z).exp())
            });
            OofMatrix {
                values,
                present: vec![true; y.len()],
            }
        })
        .collect()
}
