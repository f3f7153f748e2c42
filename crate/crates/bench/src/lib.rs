//! Benchmarks for the numerical kernels live in `benches/`. This library only
//! provides the shared fixtures.

use nhqc_core::{Complex64, ModelParams};

/// Default ring (L = 55) at the given interaction and non-Hermiticity.
pub fn ring(interaction: f64, h: f64) -> ModelParams {
    ModelParams::default()
        .with_interaction(interaction)
        .and_then(|p| p.with_non_hermiticity(h))
        .expect("valid benchmark parameters")
}

/// Deterministic non-trivial vector of length `n`.
pub fn test_vector(n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|k| {
            let x = k as f64;
            Complex64::new((0.37 * x).sin(), (0.11 * x).cos())
        })
        .collect()
}
