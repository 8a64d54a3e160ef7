//! Layer kernels, chain-function evaluation, Gram matrices and norm bounds.
//!
//! The layer-ℓ kernel is φ^ℓ(x, (f, b)) = σ^ℓ(f(x) + b) β^ℓ(f, b), with
//! φ¹(x, (v, b)) = σ¹(⟨v, x⟩ + b) β¹(v, b) at the bottom. A chain function is a
//! finite sum Σⱼ cⱼ φ^L(x, wⱼ) whose atoms reference lower functions in a
//! registry; evaluation walks that DAG once per input point, memoizing every
//! sub-function value.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Atom, ChainAtom, ChainFunction, FunctionId, Layer1Atom, LayerSpec, Registry};

/// values[i][j] = φ^layer(x_i, atoms[j]).
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    values: Array2<f64>,
    layer: usize,
    atoms: Vec<Atom>,
}

impl GramMatrix {
    /// Wraps precomputed kernel values. `values` must have one column per atom.
    pub fn from_parts(values: Array2<f64>, layer: usize, atoms: Vec<Atom>) -> Result<Self> {
        if values.ncols() != atoms.len() {
            return Err(Error::contract(format!(
                "Gram matrix has {} columns for {} atoms",
                values.ncols(),
                atoms.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("Gram matrix has non-finite entries"));
        }
        Ok(Self { values, layer, atoms })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// G·c, summed left to right in column order.
    pub fn apply(&self, coeffs: &[f64]) -> Result<Array1<f64>> {
        if coeffs.len() != self.ncols() {
            return Err(Error::contract("coefficient count does not match Gram columns"));
        }
        Ok(self
            .values
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(coeffs).fold(0.0, |acc, (g, c)| acc + c * g))
            .collect())
    }

    /// Row-major CSV, 17 significant digits, no header.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.values.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// σ(⟨v, x⟩ + b) β(v, b).
pub fn kernel_layer1(x: ArrayView1<f64>, atom: &Layer1Atom, spec: LayerSpec) -> Result<f64> {
    if x.len() != atom.dim() {
        return Err(Error::contract(format!(
            "input has dimension {} but atom has dimension {}",
            x.len(),
            atom.dim()
        )));
    }
    let pre = atom.v.iter().zip(x.iter()).fold(atom.b, |acc, (v, x)| acc + v * x);
    Ok(spec.activation.apply(pre) * spec.weighting.layer1(atom)?)
}

/// σ(f(x) + b) β(f, b) for a chain atom (f, b).
pub fn kernel_chain_layer(
    x: ArrayView1<f64>,
    atom: &ChainAtom,
    spec: LayerSpec,
    registry: &Registry,
) -> Result<f64> {
    PointEvaluator::new(registry, x).kernel(&Atom::Chain(atom.clone()), spec)
}

/// f(x) = Σⱼ cⱼ φ^L(x, wⱼ).
pub fn eval_chain(f: &ChainFunction, x: ArrayView1<f64>) -> Result<f64> {
    PointEvaluator::new(f.registry(), x).value(&f.id())
}

/// [`eval_chain`] over the rows of `xs`. Rows are independent, so the parallel
/// result is bit-identical to the sequential one.
pub fn eval_chain_batch(f: &ChainFunction, xs: ArrayView2<f64>) -> Result<Array1<f64>> {
    let values: Result<Vec<f64>> = (0..xs.nrows())
        .into_par_iter()
        .map(|i| eval_chain(f, xs.row(i)))
        .collect();
    Ok(Array1::from(values?))
}

/// Values of every function in `ids` at every row of `xs` (N × |ids|), sharing
/// one memo table per row.
pub fn eval_many(registry: &Registry, ids: &[FunctionId], xs: ArrayView2<f64>) -> Result<Array2<f64>> {
    let rows: Result<Vec<Vec<f64>>> = (0..xs.nrows())
        .into_par_iter()
        .map(|i| {
            let mut ev = PointEvaluator::new(registry, xs.row(i));
            ids.iter().map(|id| ev.value(id)).collect()
        })
        .collect();
    let rows = rows?;
    let mut out = Array2::zeros((xs.nrows(), ids.len()));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    Ok(out)
}

/// Assembles φ^layer(x_i, w_j) for all data rows and atoms.
pub fn gram_matrix(
    xs: ArrayView2<f64>,
    atoms: &[Atom],
    layer: usize,
    spec: LayerSpec,
    registry: &Registry,
) -> Result<GramMatrix> {
    if layer == 0 {
        return Err(Error::contract("layers are numbered from 1"));
    }
    for atom in atoms {
        match atom {
            Atom::Layer1(_) if layer != 1 => {
                return Err(Error::contract(format!("layer-1 atom in a layer-{layer} Gram matrix")))
            }
            Atom::Chain(a) if layer == 1 => {
                return Err(Error::contract(format!("chain atom {} in a layer-1 Gram matrix", a.f_ref)))
            }
            Atom::Chain(a) => {
                let depth = registry.get(&a.f_ref)?.depth();
                if depth != layer - 1 {
                    return Err(Error::contract(format!(
                        "layer-{layer} atom references a depth-{depth} function"
                    )));
                }
            }
            Atom::Layer1(_) => {}
        }
    }
    let rows: Result<Vec<Vec<f64>>> = (0..xs.nrows())
        .into_par_iter()
        .map(|i| {
            let mut ev = PointEvaluator::new(registry, xs.row(i));
            atoms.iter().map(|a| ev.kernel(a, spec)).collect()
        })
        .collect();
    let mut values = Array2::zeros((xs.nrows(), atoms.len()));
    for (i, row) in rows?.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            values[[i, j]] = v;
        }
    }
    GramMatrix::from_parts(values, layer, atoms.to_vec())
}

/// ν(f) = |μ|(Ω^L). Coefficients already carry the 1/β factor, so this is the
/// sum Σⱼ |W^L_{1j}| / β^L(f_j, b_j) for an embedded network.
pub fn norm_upper_bound(f: &ChainFunction) -> f64 {
    f.measure().total_variation()
}

/// β of an atom at `spec`, resolving ν of chain sub-functions from `registry`.
pub fn atom_weight(atom: &Atom, spec: LayerSpec, registry: &Registry) -> Result<f64> {
    match atom {
        Atom::Layer1(a) => spec.weighting.layer1(a),
        Atom::Chain(a) => {
            let nu = registry.get(&a.f_ref)?.norm_bound();
            spec.weighting.chain(nu, a.b)
        }
    }
}

/// Forward pass at a single point with per-function memoization.
pub(crate) struct PointEvaluator<'a> {
    registry: &'a Registry,
    x: ArrayView1<'a, f64>,
    values: HashMap<FunctionId, f64>,
}

impl<'a> PointEvaluator<'a> {
    pub(crate) fn new(registry: &'a Registry, x: ArrayView1<'a, f64>) -> Self {
        Self {
            registry,
            x,
            values: HashMap::new(),
        }
    }

    pub(crate) fn value(&mut self, id: &FunctionId) -> Result<f64> {
        if let Some(&v) = self.values.get(id) {
            return Ok(v);
        }
        let node = self.registry.get(id)?;
        let spec = node.layer_spec(node.depth());
        let mut sum = 0.0;
        for (atom, c) in node.measure().iter() {
            sum += c * self.kernel(atom, spec)?;
        }
        self.values.insert(*id, sum);
        Ok(sum)
    }

    pub(crate) fn kernel(&mut self, atom: &Atom, spec: LayerSpec) -> Result<f64> {
        match atom {
            Atom::Layer1(a) => kernel_layer1(self.x, a, spec),
            Atom::Chain(a) => {
                let inner = self.value(&a.f_ref)?;
                let beta = atom_weight(atom, spec, self.registry)?;
                Ok(spec.activation.apply(inner + a.b) * beta)
            }
        }
    }
}
