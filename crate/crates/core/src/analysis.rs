//! Norm diagnostics and capacity estimates: path norm, bias elimination by
//! push-forward, and Rademacher/Gaussian complexity of the unit ball over a
//! finite atom pool.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{atom_weight, eval_chain_batch, gram_matrix};
use crate::model::{
    Atom, AtomicMeasure, ChainAtom, ChainFunction, DeepNetwork, FunctionNode, Layer1Atom, LayerSpec,
    Registry, WeightingSpec,
};

/// Σ over input-to-output index paths of |product of weights|, per output.
///
/// Computed as p¹ = |W¹|·𝟙, p^ℓ = |W^ℓ| p^{ℓ-1}, then |W_out| p^L.
pub fn path_norms(net: &DeepNetwork) -> Vec<f64> {
    let mut p = Array1::<f64>::ones(net.input_dim());
    for layer in net.layers() {
        p = layer.weights.mapv(f64::abs).dot(&p);
    }
    net.final_weights().mapv(f64::abs).dot(&p).to_vec()
}

/// Path norm summed over outputs; for a single-output network this is the
/// usual path norm.
pub fn path_norm(net: &DeepNetwork) -> f64 {
    path_norms(net).iter().sum()
}

/// The function x ↦ 1 at depth `layers.len()`, built in `registry`.
///
/// Depth 1 is the single atom (v = 0, b = 1) with coefficient 1/(σ(1)β); each
/// further layer wraps the previous constant in the atom (const, 0), which
/// outputs σ(1)β again.
pub fn constant_function(registry: &Arc<Registry>, layers: &[LayerSpec], input_dim: usize) -> Result<ChainFunction> {
    if layers.is_empty() {
        return Err(Error::contract("constant function needs at least one layer"));
    }
    let mut current: Option<ChainFunction> = None;
    for depth in 1..=layers.len() {
        let spec = layers[depth - 1];
        let atom: Atom = match &current {
            None => Layer1Atom::new(vec![0.0; input_dim], 1.0).into(),
            Some(f) => ChainAtom::new(f.id(), 0.0).into(),
        };
        let unit = spec.activation.apply(1.0) * atom_weight(&atom, spec, registry)?;
        if unit == 0.0 || !unit.is_finite() {
            return Err(Error::contract(format!(
                "cannot build a constant with {} at layer {depth}",
                spec.activation
            )));
        }
        let node = FunctionNode::with_layers(AtomicMeasure::new(vec![atom], vec![1.0 / unit])?, &layers[..depth])?;
        current = Some(ChainFunction::new(registry, node)?);
    }
    Ok(current.expect("at least one layer"))
}

#[derive(Clone, Debug)]
pub struct BiasElimination {
    /// Same values as the input, every top-layer bias zero, top weighting β₁.
    pub function: ChainFunction,
    /// max over supported atoms of |β₂(f, b) / β₁(f + b·c)|.
    pub sup_ratio: f64,
    pub input_total_variation: f64,
    pub output_total_variation: f64,
}

/// Pushes the top-layer measure of `f` forward along (g, b) ↦ (g + b·c, 0),
/// where c is `const_fn`, and reweights each coefficient by β₂(g, b)/β₁(g + b·c)
/// so values are unchanged. β₂ is the top weighting of `f`; the result carries
/// `beta1` as its top weighting.
pub fn eliminate_bias(f: &ChainFunction, beta1: WeightingSpec, const_fn: &ChainFunction) -> Result<BiasElimination> {
    let depth = f.depth();
    if depth < 2 {
        return Err(Error::contract("bias elimination needs a chain layer (depth >= 2)"));
    }
    let registry = f.registry();
    if !Arc::ptr_eq(registry, const_fn.registry()) {
        return Err(Error::contract("constant function must live in the same registry"));
    }
    let specs = f.layer_specs();
    if const_fn.depth() != depth - 1 || const_fn.layer_specs()[..] != specs[..depth - 1] {
        return Err(Error::contract(format!(
            "constant function must have depth {} and the same lower layers",
            depth - 1
        )));
    }
    check_constant(const_fn, f.input_dim()?.unwrap_or(1))?;

    let top = specs[depth - 1];
    let const_measure = const_fn.measure().clone();
    let mut atoms = Vec::with_capacity(f.measure().len());
    let mut coeffs = Vec::with_capacity(f.measure().len());
    let mut sup_ratio: f64 = 0.0;
    for (atom, c) in f.measure().iter() {
        let chain = atom.as_chain().expect("chain atom above layer 1");
        let sub = registry.get(&chain.f_ref)?;
        if beta1.chain(sub.norm_bound(), 0.0)? != top.weighting.chain(sub.norm_bound(), 0.0)? {
            return Err(Error::contract(format!(
                "weightings {} and {} disagree on a bias-free atom",
                beta1, top.weighting
            )));
        }
        let beta2 = top.weighting.chain(sub.norm_bound(), chain.b)?;
        let shifted = if chain.b == 0.0 {
            chain.f_ref
        } else {
            let measure = sub.measure().concat(&const_measure.scaled(chain.b))?.canonicalize();
            registry.insert(FunctionNode::with_layers(measure, &specs[..depth - 1])?)?
        };
        let beta1_value = beta1.chain(registry.get(&shifted)?.norm_bound(), 0.0)?;
        let ratio = beta2 / beta1_value;
        sup_ratio = sup_ratio.max(ratio.abs());
        atoms.push(ChainAtom::new(shifted, 0.0).into());
        coeffs.push(c * ratio);
    }

    let mut out_specs = specs.clone();
    out_specs[depth - 1] = LayerSpec::new(top.activation, beta1);
    let measure = AtomicMeasure::new(atoms, coeffs)?.canonicalize();
    let output_total_variation = measure.total_variation();
    let function = ChainFunction::new(registry, FunctionNode::with_layers(measure, &out_specs)?)?;
    Ok(BiasElimination {
        function,
        sup_ratio,
        input_total_variation: f.measure().total_variation(),
        output_total_variation,
    })
}

/// Probe grid: the origin, ±e_k, ±2.5·𝟙 and a fixed set of scattered points.
fn probe_grid(dim: usize) -> Array2<f64> {
    let mut rows: Vec<Vec<f64>> = vec![vec![0.0; dim], vec![2.5; dim], vec![-2.5; dim]];
    for k in 0..dim {
        for s in [1.0, -1.0] {
            let mut e = vec![0.0; dim];
            e[k] = s;
            rows.push(e);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..16 {
        rows.push((0..dim).map(|_| 3.0 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect::<Vec<f64>>());
    }
    Array2::from_shape_fn((rows.len(), dim), |(i, j)| rows[i][j])
}

fn check_constant(const_fn: &ChainFunction, dim: usize) -> Result<()> {
    let values = eval_chain_batch(const_fn, probe_grid(dim).view())?;
    if let Some(v) = values.iter().find(|v| (*v - 1.0).abs() > 1e-12) {
        return Err(Error::contract(format!("constant function evaluates to {v} on the probe grid")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComplexityKind {
    Rademacher,
    Gaussian,
}

/// How the noise vectors ξ are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseDraws {
    /// `count` independent draws; draw k uses stream k of a ChaCha generator
    /// seeded with `seed`, so results do not depend on thread scheduling.
    Sampled { count: usize, seed: u64 },
    /// Every sign vector in {±1}^N, giving the exact expectation over the pool.
    /// Rademacher only, N ≤ 24.
    Exhaustive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityEstimate {
    pub value: f64,
    pub kind: ComplexityKind,
    pub num_noise_draws: usize,
    pub pool_size: usize,
    pub standard_error: f64,
    /// Always true: the sup runs over a finite pool, not all of Ω.
    pub lower_bound: bool,
    /// max_j |ξᵀ G_j| for each draw, in draw order.
    #[serde(skip)]
    pub per_draw_sups: Vec<f64>,
}

impl ComplexityEstimate {
    /// Per-draw sups as CSV with a `draw,sup` header.
    pub fn draws_csv(&self) -> String {
        let mut out = String::from("draw,sup\n");
        for (k, s) in self.per_draw_sups.iter().enumerate() {
            out.push_str(&format!("{k},{s:?}\n"));
        }
        out
    }
}

const MAX_EXHAUSTIVE_POINTS: usize = 24;

/// (1/N) E max_j |Σ_i ξ_i G_ij| for an N × m Gram matrix G.
pub fn complexity_from_gram(g: ArrayView2<f64>, kind: ComplexityKind, draws: NoiseDraws) -> Result<ComplexityEstimate> {
    let (n, m) = g.dim();
    if m == 0 {
        return Err(Error::contract("complexity needs a non-empty pool"));
    }
    if n == 0 {
        return Err(Error::contract("complexity needs at least one data point"));
    }
    let sups: Vec<f64> = match draws {
        NoiseDraws::Sampled { count, seed } => {
            if count == 0 {
                return Err(Error::contract("need at least one noise draw"));
            }
            (0..count)
                .into_par_iter()
                .map(|k| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(k as u64);
                    let xi: Vec<f64> = match kind {
                        ComplexityKind::Rademacher => (0..n)
                            .map(|_| if rand::Rng::random::<bool>(&mut rng) { 1.0 } else { -1.0 })
                            .collect(),
                        ComplexityKind::Gaussian => (0..n).map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect(),
                    };
                    column_sup(g, &xi)
                })
                .collect()
        }
        NoiseDraws::Exhaustive => {
            if kind != ComplexityKind::Rademacher {
                return Err(Error::contract("exhaustive enumeration is only defined for sign noise"));
            }
            if n > MAX_EXHAUSTIVE_POINTS {
                return Err(Error::contract(format!(
                    "exhaustive enumeration limited to {MAX_EXHAUSTIVE_POINTS} points, got {n}"
                )));
            }
            (0..1u64 << n)
                .into_par_iter()
                .map(|bits| {
                    let xi: Vec<f64> = (0..n).map(|i| if bits >> i & 1 == 1 { -1.0 } else { 1.0 }).collect();
                    column_sup(g, &xi)
                })
                .collect()
        }
    };
    let count = sups.len();
    // identical draws (always the case for N = 1) give their common value
    // exactly instead of a rounded sum / count
    let constant = sups.iter().all(|&s| s == sups[0]);
    let mean = if constant { sups[0] } else { sups.iter().sum::<f64>() / count as f64 };
    let standard_error = match draws {
        NoiseDraws::Sampled { .. } if count > 1 && !constant => {
            let var = sups.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
            (var / count as f64).sqrt() / n as f64
        }
        _ => 0.0,
    };
    Ok(ComplexityEstimate {
        value: mean / n as f64,
        kind,
        num_noise_draws: count,
        pool_size: m,
        standard_error,
        lower_bound: true,
        per_draw_sups: sups,
    })
}

/// max_j |Σ_i ξ_i G_ij|, the inner sums taken in row order.
pub fn column_sup(g: ArrayView2<f64>, xi: &[f64]) -> f64 {
    g.columns()
        .into_iter()
        .map(|col| col.iter().zip(xi).fold(0.0, |acc, (v, s)| acc + s * v).abs())
        .fold(0.0, f64::max)
}

/// Complexity of the layer-`layer` unit ball on `xs`, with the sup restricted
/// to `pool`. Chain atoms in the pool resolve through `registry`.
pub fn rademacher_complexity(
    layer: usize,
    spec: LayerSpec,
    registry: &Registry,
    xs: ArrayView2<f64>,
    pool: &[Atom],
    draws: NoiseDraws,
    kind: ComplexityKind,
) -> Result<ComplexityEstimate> {
    if pool.is_empty() {
        return Err(Error::contract("complexity needs a non-empty pool"));
    }
    let gram = gram_matrix(xs, pool, layer, spec, registry)?;
    complexity_from_gram(gram.values().view(), kind, draws)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::eval_chain;
    use crate::model::ActivationSpec;
    use crate::model::HiddenLayer;
    use ndarray::array;

    fn relu(weighting: WeightingSpec) -> LayerSpec {
        LayerSpec::new(ActivationSpec::Relu, weighting)
    }

    #[test]
    fn single_path() {
        let net = DeepNetwork::new(
            vec![HiddenLayer::new(array![[2.0]], array![0.0], relu(WeightingSpec::Unit))],
            array![[3.0]],
        )
        .unwrap();
        assert_eq!(path_norm(&net), 6.0);
    }

    #[test]
    fn blocked_paths() {
        let net = DeepNetwork::new(
            vec![
                HiddenLayer::new(array![[1.0, 2.0], [3.0, 4.0]], array![0.0, 0.0], relu(WeightingSpec::Unit)),
                HiddenLayer::new(Array2::zeros((3, 2)), Array1::zeros(3), relu(WeightingSpec::Unit)),
            ],
            array![[1.0, 1.0, 1.0]],
        )
        .unwrap();
        assert_eq!(path_norm(&net), 0.0);
    }

    #[test]
    fn constants_are_one() {
        for activation in ActivationSpec::ALL {
            for weighting in [WeightingSpec::Unit, WeightingSpec::InverseAffine, WeightingSpec::InverseNormBias] {
                let spec = LayerSpec::new(activation, weighting);
                let registry = Registry::new();
                let c = constant_function(&registry, &[spec, spec, spec], 2).unwrap();
                for x in [array![0.0, 0.0], array![5.0, -3.0], array![-1.0, 0.25]] {
                    let v = eval_chain(&c, x.view()).unwrap();
                    assert!((v - 1.0).abs() <= 1e-14, "{activation} {weighting}: {v}");
                }
            }
        }
    }

    #[test]
    fn zero_bias_atoms_are_untouched() {
        let registry = Registry::new();
        let spec = relu(WeightingSpec::Unit);
        let inner = FunctionNode::with_layers(
            AtomicMeasure::new(vec![Layer1Atom::new(vec![1.0], 0.5).into()], vec![2.0]).unwrap(),
            &[spec],
        )
        .unwrap();
        let id = registry.insert(inner).unwrap();
        let top = FunctionNode::with_layers(
            AtomicMeasure::new(vec![ChainAtom::new(id, 0.0).into()], vec![1.5]).unwrap(),
            &[spec, spec],
        )
        .unwrap();
        let f = ChainFunction::new(&registry, top).unwrap();
        let c = constant_function(&registry, &[spec], 1).unwrap();
        let out = eliminate_bias(&f, WeightingSpec::Unit, &c).unwrap();
        assert_eq!(out.function.measure(), f.measure());
        assert_eq!(out.sup_ratio, 1.0);
    }

    #[test]
    fn incompatible_weightings_are_rejected() {
        let registry = Registry::new();
        let spec = LayerSpec::new(ActivationSpec::Relu, WeightingSpec::InverseAffine);
        let inner = FunctionNode::with_layers(
            AtomicMeasure::new(vec![Layer1Atom::new(vec![1.0], 0.0).into()], vec![1.0]).unwrap(),
            &[spec],
        )
        .unwrap();
        let id = registry.insert(inner).unwrap();
        let f = ChainFunction::new(
            &registry,
            FunctionNode::with_layers(
                AtomicMeasure::new(vec![ChainAtom::new(id, 1.0).into()], vec![1.0]).unwrap(),
                &[spec, spec],
            )
            .unwrap(),
        )
        .unwrap();
        let c = constant_function(&registry, &[spec], 1).unwrap();
        assert!(eliminate_bias(&f, WeightingSpec::InverseNormBias, &c).is_err());
    }

    #[test]
    fn non_constant_is_rejected() {
        let registry = Registry::new();
        let spec = relu(WeightingSpec::Unit);
        let fake = ChainFunction::new(
            &registry,
            FunctionNode::with_layers(
                AtomicMeasure::new(vec![Layer1Atom::new(vec![1.0], 1.0).into()], vec![1.0]).unwrap(),
                &[spec],
            )
            .unwrap(),
        )
        .unwrap();
        let f = ChainFunction::new(
            &registry,
            FunctionNode::with_layers(
                AtomicMeasure::new(vec![ChainAtom::new(fake.id(), 1.0).into()], vec![1.0]).unwrap(),
                &[spec, spec],
            )
            .unwrap(),
        )
        .unwrap();
        assert!(matches!(eliminate_bias(&f, WeightingSpec::Unit, &fake), Err(Error::Contract(_))));
    }

    #[test]
    fn one_point_has_no_variance() {
        let g = array![[0.5, -2.0, 1.0]];
        let est = complexity_from_gram(
            g.view(),
            ComplexityKind::Rademacher,
            NoiseDraws::Sampled { count: 50, seed: 3 },
        )
        .unwrap();
        assert_eq!(est.value, 2.0);
        assert_eq!(est.standard_error, 0.0);
        assert!(est.lower_bound);
    }

    #[test]
    fn sampled_draws_are_reproducible() {
        let g = array![[0.5, -2.0, 1.0], [1.0, 0.0, 3.0], [0.1, 0.2, -0.3]];
        let draws = NoiseDraws::Sampled { count: 64, seed: 11 };
        for kind in [ComplexityKind::Rademacher, ComplexityKind::Gaussian] {
            let a = complexity_from_gram(g.view(), kind, draws).unwrap();
            let b = complexity_from_gram(g.view(), kind, draws).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.per_draw_sups, b.per_draw_sups);
        }
    }

    #[test]
    fn empty_pool_and_bad_modes() {
        let empty = Array2::<f64>::zeros((2, 0));
        assert!(complexity_from_gram(empty.view(), ComplexityKind::Rademacher, NoiseDraws::Exhaustive).is_err());
        let g = array![[1.0], [2.0]];
        assert!(complexity_from_gram(g.view(), ComplexityKind::Gaussian, NoiseDraws::Exhaustive).is_err());
        assert!(complexity_from_gram(
            g.view(),
            ComplexityKind::Rademacher,
            NoiseDraws::Sampled { count: 0, seed: 0 }
        )
        .is_err());
    }
}
