//! Regularized empirical risk minimization in representer form.
//!
//! The inner layers are fixed by sampling candidate atoms and keeping a
//! rank-revealing basis of at most N of them per layer; the last layer then
//! solves the convex problem
//!
//! ```text
//! min_c  ½‖G c − y‖² + λ‖c‖₁
//! ```
//!
//! by cyclic coordinate descent. Because stored coefficients carry the 1/β
//! factor, ‖c‖₁ is the total variation of the resulting measure.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bridge::{extract_network, select_basis, BasisSelection, DEFAULT_PIVOT_THRESHOLD};
use crate::error::{Error, Result};
use crate::kernel::{gram_matrix, GramMatrix};
use crate::model::{
    ActivationSpec, Atom, AtomicMeasure, ChainAtom, ChainFunction, Dataset, DeepNetwork, FunctionNode, Layer1Atom,
    LayerSpec, Registry, WeightingSpec,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    #[default]
    Squared,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// v ~ N(0, I), b ~ U[-1, 1]; chain coefficients ~ N(0, 1).
    #[default]
    NormalUniform,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    #[serde(default)]
    pub kind: SamplerKind,
    #[serde(default)]
    pub seed: u64,
}

fn default_lambda() -> f64 {
    1.0
}

fn default_tolerance() -> f64 {
    1e-10
}

fn default_max_iterations() -> usize {
    100_000
}

fn default_pivot_threshold() -> f64 {
    DEFAULT_PIVOT_THRESHOLD
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub depth: usize,
    /// Weight of the norm penalty; 1 gives the unscaled problem.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub loss: Loss,
    /// Sampled candidates per layer, m_1 … m_L. Empty means 64 per layer.
    #[serde(default)]
    pub pool_sizes: Vec<usize>,
    #[serde(default)]
    pub sampler: SamplerSpec,
    /// Stop when a sweep lowers the objective by less than this fraction.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_pivot_threshold")]
    pub pivot_threshold: f64,
    /// σ and β per layer. Empty means ReLU with unit weighting everywhere.
    #[serde(default)]
    pub layers: Vec<LayerSpec>,
}

impl FitConfig {
    pub fn new(depth: usize) -> Self {
        Self {
            depth,
            lambda: default_lambda(),
            loss: Loss::Squared,
            pool_sizes: Vec::new(),
            sampler: SamplerSpec::default(),
            tolerance: default_tolerance(),
            max_iterations: default_max_iterations(),
            pivot_threshold: default_pivot_threshold(),
            layers: Vec::new(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.sampler.seed = seed;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_pool_sizes(mut self, sizes: Vec<usize>) -> Self {
        self.pool_sizes = sizes;
        self
    }

    pub fn with_layers(mut self, layers: Vec<LayerSpec>) -> Self {
        self.layers = layers;
        self
    }

    pub fn pool_size(&self, layer: usize) -> usize {
        self.pool_sizes.get(layer - 1).copied().unwrap_or(64)
    }

    pub fn layer_spec(&self, layer: usize) -> LayerSpec {
        self.layers
            .get(layer - 1)
            .copied()
            .unwrap_or(LayerSpec::new(ActivationSpec::Relu, WeightingSpec::Unit))
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        (1..=self.depth).map(|l| self.layer_spec(l)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::contract("depth must be at least 1"));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::contract(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::contract("tolerance must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(Error::contract("max_iterations must be positive"));
        }
        if !self.pool_sizes.is_empty() && self.pool_sizes.len() != self.depth {
            return Err(Error::contract(format!(
                "pool_sizes has {} entries for depth {}",
                self.pool_sizes.len(),
                self.depth
            )));
        }
        // layer 1 always has the 2N data-driven atoms, deeper layers only samples
        if (2..=self.depth).any(|l| self.pool_size(l) == 0) {
            return Err(Error::contract("pool sizes above layer 1 must be at least 1"));
        }
        if !self.layers.is_empty() && self.layers.len() != self.depth {
            return Err(Error::contract(format!(
                "layers has {} entries for depth {}",
                self.layers.len(),
                self.depth
            )));
        }
        if !(0.0..1.0).contains(&self.pivot_threshold) {
            return Err(Error::contract("pivot_threshold must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Candidate atoms of one layer with their Gram matrix on the data and the
/// basis selected from it.
#[derive(Clone, Debug)]
pub struct PoolLayer {
    pub gram: GramMatrix,
    pub selection: BasisSelection,
}

impl PoolLayer {
    pub fn atoms(&self) -> &[Atom] {
        self.gram.atoms()
    }

    pub fn basis_atoms(&self) -> Vec<Atom> {
        self.selection.col_indices.iter().map(|&j| self.gram.atoms()[j].clone()).collect()
    }

    /// N × r Gram columns of the selected basis.
    pub fn basis_gram(&self) -> Array2<f64> {
        self.gram.values().select(Axis(1), &self.selection.col_indices)
    }
}

#[derive(Clone, Debug)]
pub struct CandidatePools {
    pub registry: Arc<Registry>,
    pub layers: Vec<PoolLayer>,
}

/// Samples candidate atoms layer by layer and selects a basis at each layer.
///
/// Layer 1 gets m₁ random atoms followed by the 2N data-driven atoms
/// (±x_i/‖x_i‖, 0). Layer ℓ gets m_ℓ atoms (g, b) where g is a random signed
/// combination of the layer-(ℓ-1) basis. Deterministic for a fixed seed.
pub fn generate_candidates(config: &FitConfig, xs: ArrayView2<f64>) -> Result<CandidatePools> {
    config.validate()?;
    if xs.nrows() == 0 {
        return Err(Error::contract("no data points"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.sampler.seed);
    let registry = Registry::new();
    let specs = config.layer_specs();
    let mut layers: Vec<PoolLayer> = Vec::with_capacity(config.depth);

    for layer in 1..=config.depth {
        let atoms: Vec<Atom> = if layer == 1 {
            layer1_candidates(config.pool_size(1), xs, &mut rng)
        } else {
            let basis = layers.last().expect("previous layer").basis_atoms();
            let mut atoms = Vec::with_capacity(config.pool_size(layer));
            for _ in 0..config.pool_size(layer) {
                let coeffs: Vec<f64> = (0..basis.len()).map(|_| rng.sample(StandardNormal)).collect();
                let node = FunctionNode::with_layers(AtomicMeasure::new(basis.clone(), coeffs)?, &specs[..layer - 1])?;
                let id = registry.insert(node)?;
                let b = rng.random_range(-1.0..=1.0);
                atoms.push(ChainAtom::new(id, b).into());
            }
            atoms
        };
        let gram = gram_matrix(xs, &atoms, layer, specs[layer - 1], &registry)?;
        let selection = select_basis(gram.values().view(), config.pivot_threshold)?;
        if selection.is_empty() {
            return Err(Error::DeadPool { layer });
        }
        layers.push(PoolLayer { gram, selection });
    }
    Ok(CandidatePools { registry, layers })
}

fn layer1_candidates(count: usize, xs: ArrayView2<f64>, rng: &mut ChaCha8Rng) -> Vec<Atom> {
    let d = xs.ncols();
    let mut atoms: Vec<Atom> = Vec::with_capacity(count + 2 * xs.nrows());
    for _ in 0..count {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let b = rng.random_range(-1.0..=1.0);
        atoms.push(Layer1Atom::new(v, b).into());
    }
    for x in xs.rows() {
        let norm = x.dot(&x).sqrt();
        let (plus, minus) = if norm > 0.0 {
            (x.mapv(|t| t / norm).to_vec(), x.mapv(|t| -t / norm).to_vec())
        } else {
            (vec![0.0; d], vec![0.0; d])
        };
        atoms.push(Layer1Atom::new(plus, 0.0).into());
        atoms.push(Layer1Atom::new(minus, 0.0).into());
    }
    atoms
}

#[derive(Clone, Debug, PartialEq)]
pub struct LastLayerSolution {
    /// m × D coefficients.
    pub coeffs: Array2<f64>,
    /// Objective before the first sweep, then after every accepted sweep.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub sweeps: usize,
}

impl LastLayerSolution {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace starts with the initial objective")
    }
}

/// ½‖G C − Y‖²_F + λ Σ |C|.
pub fn lasso_objective(g: ArrayView2<f64>, y: ArrayView2<f64>, coeffs: ArrayView2<f64>, lambda: f64) -> f64 {
    let residual = &y - &g.dot(&coeffs);
    0.5 * residual.iter().map(|r| r * r).sum::<f64>() + lambda * coeffs.iter().map(|c| c.abs()).sum::<f64>()
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Sweeps between active-set polishing attempts.
const POLISH_EVERY: usize = 25;

/// Cyclic coordinate descent with exact soft-threshold updates, columns in
/// index order, accelerated by active-set polishing.
///
/// Every [`POLISH_EVERY`] sweeps, and whenever a sweep stalls, each output's
/// current support and sign pattern define a smooth least-squares problem that
/// is solved exactly (QR of the active columns); the iterate moves toward that
/// solution up to the first sign change. This keeps the objective monotone
/// while escaping the slow zig-zag of coordinate descent on nearly collinear
/// columns.
///
/// Stops with `converged` set when the optimality conditions hold, or when a
/// sweep lowers the objective by less than `tolerance` times its value and
/// polishing cannot do better. Hitting `max_iterations` sweeps first leaves
/// `converged` false. A step that would raise the recomputed objective (only
/// possible through rounding) is rejected, so the trace never increases.
pub fn solve_last_layer(
    g: ArrayView2<f64>,
    y: ArrayView2<f64>,
    lambda: f64,
    tolerance: f64,
    max_iterations: usize,
) -> Result<LastLayerSolution> {
    let (n, m) = g.dim();
    if y.nrows() != n {
        return Err(Error::contract(format!("{} targets for a {n}-row Gram matrix", y.nrows())));
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::contract("lambda must be positive"));
    }
    if !(tolerance > 0.0) {
        return Err(Error::contract("tolerance must be positive"));
    }
    let outputs = y.ncols();
    let col_sq: Vec<f64> = g.columns().into_iter().map(|c| c.dot(&c)).collect();
    let mut coeffs = Array2::<f64>::zeros((m, outputs));
    let mut residual = y.to_owned();
    let mut previous = lasso_objective(g, y, coeffs.view(), lambda);
    let mut trace = vec![previous];
    let kkt_tol = 1e-9 * lambda + 1e-13 * g.t().dot(&y).iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut converged = previous == 0.0 || kkt_violation(g, residual.view(), coeffs.view(), lambda) <= kkt_tol;
    let mut sweeps = 0;

    while !converged && sweeps < max_iterations {
        sweeps += 1;
        let before = coeffs.clone();
        for j in 0..m {
            if col_sq[j] == 0.0 {
                continue;
            }
            let column = g.column(j);
            for d in 0..outputs {
                let old = coeffs[[j, d]];
                let rho = column.dot(&residual.column(d)) + col_sq[j] * old;
                let new = soft_threshold(rho, lambda) / col_sq[j];
                if new != old {
                    residual.column_mut(d).scaled_add(old - new, &column);
                    coeffs[[j, d]] = new;
                }
            }
        }
        residual = &y - &g.dot(&coeffs);
        let current = lasso_objective(g, y, coeffs.view(), lambda);
        if current > previous {
            coeffs = before;
            residual = &y - &g.dot(&coeffs);
            converged = kkt_violation(g, residual.view(), coeffs.view(), lambda) <= kkt_tol;
            break;
        }
        let stalled = previous - current <= tolerance * previous.abs();
        trace.push(current);
        previous = current;

        if stalled || sweeps % POLISH_EVERY == 0 {
            let polished = polish(g, y, coeffs.view(), lambda);
            let value = lasso_objective(g, y, polished.view(), lambda);
            let gain = previous - value;
            if gain > 0.0 {
                coeffs = polished;
                residual = &y - &g.dot(&coeffs);
                trace.push(value);
                previous = value;
            }
            if kkt_violation(g, residual.view(), coeffs.view(), lambda) <= kkt_tol
                || (stalled && gain <= tolerance * previous.abs())
            {
                converged = true;
            }
        }
    }
    Ok(LastLayerSolution {
        coeffs,
        objective_trace: trace,
        converged,
        sweeps,
    })
}

/// Largest violation of the optimality conditions: gⱼᵀr = λ sign(cⱼ) on the
/// support and |gⱼᵀr| ≤ λ off it.
pub fn kkt_violation(g: ArrayView2<f64>, residual: ArrayView2<f64>, coeffs: ArrayView2<f64>, lambda: f64) -> f64 {
    let corr = g.t().dot(&residual);
    corr.iter()
        .zip(coeffs.iter())
        .map(|(&r, &c)| {
            if c != 0.0 {
                (r - lambda * c.signum()).abs()
            } else {
                (r.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// One active-set step per output column: minimize the smooth objective on
/// the current support with signs fixed, then move toward that minimizer as
/// far as the signs allow. Coordinates reaching zero are dropped exactly.
fn polish(g: ArrayView2<f64>, y: ArrayView2<f64>, coeffs: ArrayView2<f64>, lambda: f64) -> Array2<f64> {
    let mut out = coeffs.to_owned();
    for d in 0..y.ncols() {
        let active: Vec<usize> = (0..g.ncols()).filter(|&j| coeffs[[j, d]] != 0.0).collect();
        if active.is_empty() || active.len() > g.nrows() {
            continue;
        }
        let Some(target) = restricted_solution(g, y.column(d), &active, coeffs.column(d), lambda) else {
            continue;
        };
        let mut step: f64 = 1.0;
        for (k, &j) in active.iter().enumerate() {
            let c = coeffs[[j, d]];
            if target[k].signum() != c.signum() || target[k] == 0.0 {
                step = step.min(c / (c - target[k]));
            }
        }
        for (k, &j) in active.iter().enumerate() {
            let c = coeffs[[j, d]];
            let moved = c + step * (target[k] - c);
            out[[j, d]] = if moved.signum() != c.signum() || (target[k].signum() != c.signum() && c / (c - target[k]) <= step) {
                0.0
            } else {
                moved
            };
        }
    }
    out
}

/// Minimizer of ½‖G_A c − y‖² + λ sᵀc over c, via the thin QR of G_A:
/// R c = Qᵀy − λ R⁻ᵀ s.
fn restricted_solution(
    g: ArrayView2<f64>,
    y: ArrayView1<f64>,
    active: &[usize],
    current: ArrayView1<f64>,
    lambda: f64,
) -> Option<Vec<f64>> {
    let n = g.nrows();
    let k = active.len();
    let ga = DMatrix::from_fn(n, k, |i, a| g[[i, active[a]]]);
    let qr = ga.qr();
    let r = qr.r();
    if (0..k).any(|i| r[(i, i)] == 0.0) {
        return None;
    }
    let signs = DVector::from_iterator(k, active.iter().map(|&j| current[j].signum()));
    let w = r.tr_solve_upper_triangular(&signs)?;
    let qty = qr.q().transpose() * DVector::from_iterator(n, y.iter().copied());
    let c = r.solve_upper_triangular(&(qty - w * lambda))?;
    c.iter().all(|v| v.is_finite()).then(|| c.iter().copied().collect())
}

/// Single-target convenience wrapper around [`solve_last_layer`].
pub fn solve_last_layer_vector(
    g: ArrayView2<f64>,
    y: ArrayView1<f64>,
    lambda: f64,
    tolerance: f64,
    max_iterations: usize,
) -> Result<(Array1<f64>, LastLayerSolution)> {
    let y2 = y.insert_axis(Axis(1));
    let sol = solve_last_layer(g, y2, lambda, tolerance, max_iterations)?;
    Ok((sol.coeffs.column(0).to_owned(), sol))
}

#[derive(Clone, Debug)]
pub struct FitResult {
    /// One function per target column, sharing a registry.
    pub functions: Vec<ChainFunction>,
    pub network: DeepNetwork,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    /// Number of last-layer atoms with a nonzero coefficient for some output.
    pub support_size: usize,
    /// Total variation Σ |c| of the last-layer measures.
    pub norm: f64,
    /// λ · norm.
    pub penalty: f64,
    /// Basis size selected at each layer of the candidate pools.
    pub pool_ranks: Vec<usize>,
    /// Largest |network(x_i) − y_i| on the training data.
    pub train_residual: f64,
    /// Largest |network(x_i) − f(x_i)| on the training data.
    pub extraction_error: f64,
    pub pools: CandidatePools,
}

impl FitResult {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("non-empty trace")
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.network.hidden_widths()
    }
}

/// Sample-then-select pipeline: candidate pools and bases for every layer,
/// coordinate descent on the top basis, pruning, then extraction of a network
/// with at most N units per hidden layer.
pub fn fit_erm(data: &Dataset, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let y = data
        .y()
        .ok_or_else(|| Error::contract("fitting needs targets"))?;
    let xs = data.x();
    let pools = generate_candidates(config, xs)?;
    let top = pools.layers.last().expect("depth >= 1");
    let basis_atoms = top.basis_atoms();
    let basis_gram = top.basis_gram();
    let solution = solve_last_layer(basis_gram.view(), y, config.lambda, config.tolerance, config.max_iterations)?;

    let support: Vec<usize> = (0..basis_atoms.len())
        .filter(|&j| solution.coeffs.row(j).iter().any(|&c| c != 0.0))
        .collect();
    let atoms: Vec<Atom> = support.iter().map(|&j| basis_atoms[j].clone()).collect();
    let specs = config.layer_specs();
    let functions = (0..y.ncols())
        .map(|d| {
            let coeffs = support.iter().map(|&j| solution.coeffs[[j, d]]).collect();
            let node = FunctionNode::with_layers(AtomicMeasure::new(atoms.clone(), coeffs)?, &specs)?;
            ChainFunction::new(&pools.registry, node)
        })
        .collect::<Result<Vec<_>>>()?;

    let extraction = extract_network(&functions, xs, config.pivot_threshold)?;
    let network = extraction.network;
    let predictions = network.forward_batch(xs)?;
    let train_residual = (&predictions - &y).iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let fitted = basis_gram.dot(&solution.coeffs);
    let extraction_error = (&predictions - &fitted).iter().fold(0.0f64, |m, r| m.max(r.abs()));

    let norm: f64 = solution.coeffs.iter().map(|c| c.abs()).sum();
    Ok(FitResult {
        functions,
        network,
        objective_trace: solution.objective_trace,
        converged: solution.converged,
        support_size: support.len(),
        norm,
        penalty: config.lambda * norm,
        pool_ranks: pools.layers.iter().map(|l| l.selection.rank()).collect(),
        train_residual,
        extraction_error,
        pools,
    })
}
