//! Seeded inputs shared by the benchmarks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use entroprog::synth::{generate, Regime, RegimeSpec};
use entroprog::GridSeries;

pub fn chaotic_grid(side: usize, n_steps: usize) -> GridSeries {
    let spec = RegimeSpec::new(
        Regime::Chaotic {
            r: 3.9,
            coupling: 0.3,
            transient: 100,
        },
        1,
    );
    generate(&spec, side, side, n_steps).expect("valid regime")
}

pub fn uniform_rows(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || rng.random::<f64>() * 2.0 - 1.0)
}

pub fn uniform_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random::<f64>()).collect()
}
