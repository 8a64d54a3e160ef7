mod common;

use common::{random_network, random_widths, relative_gap, relu, rng, uniform_matrix};
use crkbs::analysis::{complexity_from_gram, constant_function, eliminate_bias, path_norms, rademacher_complexity};
use crkbs::{
    embed_network, eval_chain_batch, norm_upper_bound, path_norm, Atom, ComplexityKind, DeepNetwork, HiddenLayer,
    Layer1Atom, NoiseDraws, Registry, WeightingSpec,
};
use ndarray::{array, Array2, Axis};
use proptest::prelude::*;
use rand::Rng;

/// Sum over every index path of |product of weights|, by explicit enumeration.
fn brute_path_norm(net: &DeepNetwork) -> f64 {
    let mut mats: Vec<Array2<f64>> = net.layers().iter().map(|l| l.weights.clone()).collect();
    mats.push(net.final_weights().clone());
    fn walk(mats: &[Array2<f64>], level: usize, from: usize, acc: f64) -> f64 {
        if level == mats.len() {
            return acc;
        }
        (0..mats[level].nrows()).map(|to| walk(mats, level + 1, to, acc * mats[level][[to, from]].abs())).sum()
    }
    (0..net.input_dim()).map(|i| walk(&mats, 0, i, 1.0)).sum()
}

#[test]
fn path_norm_matches_enumeration() {
    let mut gen = rng(21);
    for _ in 0..10 {
        let widths = random_widths(&mut gen, 3, 5, 3);
        let net = random_network(&mut gen, &widths, 1, relu(WeightingSpec::Unit), true);
        assert!(relative_gap(path_norm(&net), brute_path_norm(&net)) <= 1e-13);
    }
}

#[test]
fn path_norm_equals_norm_bound_for_zero_bias_relu() {
    let mut gen = rng(22);
    for _ in 0..10 {
        let depth = gen.random_range(1..=4);
        let widths = random_widths(&mut gen, depth, 6, 3);
        let net = random_network(&mut gen, &widths, 1, relu(WeightingSpec::InverseNormBias), false);
        let f = &embed_network(&net).unwrap()[0];
        assert!(relative_gap(norm_upper_bound(f), path_norm(&net)) <= 1e-12);
    }
}

#[test]
fn toy_path_norm() {
    let net = DeepNetwork::new(
        vec![HiddenLayer::new(array![[1.0, 2.0], [0.0, 1.0], [1.0, 1.0]], array![0.0, 0.0, 0.0], relu(WeightingSpec::Unit))],
        array![[1.0, 1.0, 1.0]],
    )
    .unwrap();
    assert_eq!(path_norm(&net), 6.0);
    assert_eq!(path_norms(&net), vec![6.0]);
}

proptest! {
    #[test]
    fn rebalancing_leaves_function_and_path_norm(seed in 0u64..5000, scale in 0.01f64..100.0) {
        let mut gen = rng(seed);
        let widths = random_widths(&mut gen, 2, 4, 2);
        let net = random_network(&mut gen, &widths, 1, relu(WeightingSpec::Unit), true);
        let unit = gen.random_range(0..widths[1]);
        let mut layers = net.layers().to_vec();
        layers[0].weights.row_mut(unit).mapv_inplace(|w| w * scale);
        layers[0].bias[unit] *= scale;
        layers[1].weights.column_mut(unit).mapv_inplace(|w| w / scale);
        let scaled = DeepNetwork::new(layers, net.final_weights().clone()).unwrap();
        prop_assert!(relative_gap(path_norm(&net), path_norm(&scaled)) <= 1e-12);
        let xs = uniform_matrix(&mut gen, 5, 2, 2.0);
        let a = net.forward_batch(xs.view()).unwrap();
        let b = scaled.forward_batch(xs.view()).unwrap();
        for (u, v) in a.iter().zip(b.iter()) {
            prop_assert!(relative_gap(*u, *v) <= 1e-12);
        }
    }
}

#[test]
fn bias_elimination_preserves_values() {
    let mut gen = rng(23);
    for _ in 0..10 {
        let widths = random_widths(&mut gen, 2, 5, 2);
        let net = random_network(&mut gen, &widths, 1, relu(WeightingSpec::Unit), true);
        let f = &embed_network(&net).unwrap()[0];
        let c = constant_function(f.registry(), &f.layer_specs()[..1], 2).unwrap();
        let out = eliminate_bias(f, WeightingSpec::Unit, &c).unwrap();
        assert!(out.function.measure().atoms().iter().all(|a| a.bias() == 0.0));
        let xs = uniform_matrix(&mut gen, 100, 2, 3.0);
        let a = eval_chain_batch(f, xs.view()).unwrap();
        let b = eval_chain_batch(&out.function, xs.view()).unwrap();
        for (u, v) in a.iter().zip(b.iter()) {
            assert!(relative_gap(*u, *v) <= 1e-10, "{u} vs {v}");
        }
        // unit weighting: every ratio is 1, so the norm cannot grow
        assert_eq!(out.sup_ratio, 1.0);
        assert!(out.output_total_variation <= out.sup_ratio * out.input_total_variation * (1.0 + 1e-12));
    }
}

#[test]
fn bias_elimination_ratio_bound_under_inverse_affine() {
    let mut gen = rng(24);
    let spec = crkbs::LayerSpec::new(crkbs::ActivationSpec::Softplus, WeightingSpec::InverseAffine);
    for _ in 0..5 {
        let net = random_network(&mut gen, &[2, 4, 3], 1, spec, true);
        let f = &embed_network(&net).unwrap()[0];
        let c = constant_function(f.registry(), &[spec], 2).unwrap();
        let out = eliminate_bias(f, WeightingSpec::InverseAffine, &c).unwrap();
        // per-atom ratio recomputed from the sub-function norms
        let mut sup: f64 = 0.0;
        for atom in f.measure().atoms() {
            let chain = atom.as_chain().unwrap();
            let nu = f.registry().get(&chain.f_ref).unwrap().norm_bound();
            let shifted = f
                .registry()
                .get(&chain.f_ref)
                .unwrap()
                .measure()
                .concat(&c.measure().scaled(chain.b))
                .unwrap()
                .canonicalize()
                .total_variation();
            sup = sup.max((1.0 + shifted) / (1.0 + nu + chain.b.abs()));
        }
        assert!(relative_gap(out.sup_ratio, sup) <= 1e-14);
        assert!(out.output_total_variation <= out.sup_ratio * out.input_total_variation * (1.0 + 1e-12));
        let xs = uniform_matrix(&mut gen, 100, 2, 3.0);
        let a = eval_chain_batch(f, xs.view()).unwrap();
        let b = eval_chain_batch(&out.function, xs.view()).unwrap();
        for (u, v) in a.iter().zip(b.iter()) {
            assert!(relative_gap(*u, *v) <= 1e-10);
        }
    }
}

#[test]
fn exhaustive_complexity_matches_hand_enumeration() {
    let g = array![[0.5, -1.0, 2.0], [1.5, 1.0, -0.25]];
    let est = complexity_from_gram(g.view(), ComplexityKind::Rademacher, NoiseDraws::Exhaustive).unwrap();
    let signs = [[1.0, 1.0], [-1.0, 1.0], [1.0, -1.0], [-1.0, -1.0]];
    let mut total = 0.0;
    for s in signs {
        let mut best: f64 = 0.0;
        for j in 0..3 {
            best = best.max((s[0] * g[[0, j]] + s[1] * g[[1, j]]).abs());
        }
        total += best;
    }
    assert_eq!(est.value, total / 4.0 / 2.0);
    assert_eq!(est.num_noise_draws, 4);
}

#[test]
fn single_point_complexity_is_the_pool_max() {
    let registry = Registry::new();
    let xs = array![[0.7, -0.2]];
    let pool: Vec<Atom> = vec![
        Layer1Atom::new(vec![1.0, 0.0], 0.1).into(),
        Layer1Atom::new(vec![-2.0, 1.0], 0.5).into(),
        Layer1Atom::new(vec![0.0, 3.0], 1.0).into(),
    ];
    let spec = relu(WeightingSpec::Unit);
    let est = rademacher_complexity(1, spec, &registry, xs.view(), &pool, NoiseDraws::Sampled { count: 17, seed: 4 }, ComplexityKind::Rademacher).unwrap();
    let gram = crkbs::gram_matrix(xs.view(), &pool, 1, spec, &registry).unwrap();
    let max = gram.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert_eq!(est.value, max);
    assert!(est.per_draw_sups.iter().all(|&s| s == max));
    assert_eq!(est.standard_error, 0.0);
}

#[test]
fn complexity_is_monotone_in_the_pool() {
    let mut gen = rng(25);
    for case in 0..10 {
        let n = gen.random_range(1..=4);
        let g = uniform_matrix(&mut gen, n, 8, 2.0);
        let keep: Vec<usize> = (0..8).filter(|_| gen.random_bool(0.5)).chain([case % 8]).collect();
        let small = g.select(Axis(1), &keep);
        for kind in [ComplexityKind::Rademacher, ComplexityKind::Gaussian] {
            let draws = NoiseDraws::Sampled { count: 40, seed: case as u64 };
            let a = complexity_from_gram(small.view(), kind, draws).unwrap();
            let b = complexity_from_gram(g.view(), kind, draws).unwrap();
            assert!(a.value <= b.value);
            assert!(a.per_draw_sups.iter().zip(&b.per_draw_sups).all(|(s, l)| s <= l));
        }
        let a = complexity_from_gram(small.view(), ComplexityKind::Rademacher, NoiseDraws::Exhaustive).unwrap();
        let b = complexity_from_gram(g.view(), ComplexityKind::Rademacher, NoiseDraws::Exhaustive).unwrap();
        assert!(a.value <= b.value);
    }
}
