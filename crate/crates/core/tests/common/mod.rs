#![allow(dead_code)]

use crkbs::{ActivationSpec, DeepNetwork, HiddenLayer, LayerSpec, WeightingSpec};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const WEIGHTINGS: [WeightingSpec; 3] =
    [WeightingSpec::Unit, WeightingSpec::InverseAffine, WeightingSpec::InverseNormBias];

pub fn rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

pub fn uniform_vector(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Array1<f64> {
    Array1::from_shape_fn(len, |_| rng.random_range(-scale..scale))
}

/// Random network with the given widths d0..dL and output dimension.
pub fn random_network(
    rng: &mut ChaCha8Rng,
    widths: &[usize],
    outputs: usize,
    spec: LayerSpec,
    with_bias: bool,
) -> DeepNetwork {
    let layers = widths
        .windows(2)
        .map(|w| {
            let bias = if with_bias { uniform_vector(rng, w[1], 1.0) } else { Array1::zeros(w[1]) };
            HiddenLayer::new(uniform_matrix(rng, w[1], w[0], 1.0), bias, spec)
        })
        .collect();
    DeepNetwork::new(layers, uniform_matrix(rng, outputs, *widths.last().unwrap(), 1.0)).unwrap()
}

pub fn random_widths(rng: &mut ChaCha8Rng, depth: usize, max_width: usize, input_dim: usize) -> Vec<usize> {
    let mut w = vec![input_dim];
    w.extend((0..depth).map(|_| rng.random_range(1..=max_width)));
    w
}

pub fn relu(weighting: WeightingSpec) -> LayerSpec {
    LayerSpec::new(ActivationSpec::Relu, weighting)
}

pub fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}
