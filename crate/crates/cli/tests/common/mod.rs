#![allow(dead_code)]

use crkbs::{DeepNetwork, HiddenLayer, LayerSpec, WeightingSpec};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const WEIGHTINGS: [WeightingSpec; 3] =
    [WeightingSpec::Unit, WeightingSpec::InverseAffine, WeightingSpec::InverseNormBias];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

pub fn vector(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Array1<f64> {
    Array1::from_shape_fn(len, |_| rng.random_range(-scale..scale))
}

/// Network with widths d0..dL and uniform weights in [-1, 1).
pub fn network(rng: &mut ChaCha8Rng, widths: &[usize], outputs: usize, spec: LayerSpec, bias: bool) -> DeepNetwork {
    let layers = widths
        .windows(2)
        .map(|w| {
            let b = if bias { vector(rng, w[1], 1.0) } else { Array1::zeros(w[1]) };
            HiddenLayer::new(matrix(rng, w[1], w[0], 1.0), b, spec)
        })
        .collect();
    DeepNetwork::new(layers, matrix(rng, outputs, *widths.last().unwrap(), 1.0)).unwrap()
}

pub fn widths(rng: &mut ChaCha8Rng, input: usize, depth: usize, max_width: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend((0..depth).map(|_| rng.random_range(1..=max_width)));
    w
}

/// |a - b| / max(|a|, |b|, 1).
pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}
