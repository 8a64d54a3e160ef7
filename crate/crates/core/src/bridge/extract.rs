use std::collections::{HashMap, HashSet};

use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::basis::{reexpress, select_basis, BasisSelection};
use super::embed::network_norm_bounds;
use crate::error::{Error, Result};
use crate::kernel::{atom_weight, eval_many, gram_matrix};
use crate::model::{Atom, ChainFunction, DeepNetwork, FunctionId, HiddenLayer, LayerSpec};

/// Relative residual allowed when a sub-function is rewritten in a layer basis.
pub const REEXPRESSION_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct Extraction {
    pub network: DeepNetwork,
    /// Σ_j |W^L_{oj}| / β^L(f_j, b_j) of the extracted network, per output.
    pub norms: Vec<f64>,
    /// Basis selected at each layer (index 0 is layer 1).
    pub selections: Vec<BasisSelection>,
}

impl Extraction {
    pub fn hidden_widths(&self) -> Vec<usize> {
        self.network.hidden_widths()
    }
}

struct LayerBasis {
    selection: BasisSelection,
    /// Selected columns of the Gram matrix, N × r in pivot order.
    columns: Array2<f64>,
    /// β of each selected atom.
    betas: Vec<f64>,
}

/// Rebuilds a network with at most N units per hidden layer that agrees with
/// `functions` on the rows of `xs`.
///
/// All functions must share one registry, depth and set of layer specs; they
/// become the output rows of the network and share its hidden layers. At each
/// layer the candidate atoms are those reachable from the roots; the basis
/// picked by [`select_basis`] becomes the layer's units, and every function one
/// level up is rewritten in that basis to give the next weight matrix.
pub fn extract_network(
    functions: &[ChainFunction],
    xs: ArrayView2<f64>,
    pivot_threshold: f64,
) -> Result<Extraction> {
    let Some(first) = functions.first() else {
        return Err(Error::contract("nothing to extract"));
    };
    let registry = first.registry();
    let depth = first.depth();
    let specs = first.layer_specs();
    for f in functions {
        if !std::sync::Arc::ptr_eq(f.registry(), registry) || f.depth() != depth || f.layer_specs() != specs {
            return Err(Error::contract("extracted functions must share registry, depth and layer specs"));
        }
    }
    if xs.nrows() == 0 || xs.ncols() == 0 {
        return Err(Error::contract("extraction needs a non-empty dataset"));
    }
    if let Some(d) = first.input_dim()? {
        if d != xs.ncols() {
            return Err(Error::contract(format!(
                "function expects inputs of dimension {d}, data has {}",
                xs.ncols()
            )));
        }
    }

    let roots: Vec<FunctionId> = functions.iter().map(ChainFunction::id).collect();
    let levels = registry.reachable(&roots)?;
    let all_ids: Vec<FunctionId> = levels.iter().flatten().copied().collect();
    let value_table = eval_many(registry, &all_ids, xs)?;
    let column_of: HashMap<FunctionId, usize> = all_ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let values_of = |id: &FunctionId| value_table.column(column_of[id]);

    let mut layers: Vec<HiddenLayer> = Vec::with_capacity(depth);
    let mut bases: Vec<LayerBasis> = Vec::with_capacity(depth);

    for layer in 1..=depth {
        let spec = specs[layer - 1];
        let candidates = distinct_atoms(&levels[layer - 1], registry)?;
        let gram = gram_matrix(xs, &candidates, layer, spec, registry)?;
        let selection = select_basis(gram.values().view(), pivot_threshold)?;
        let columns = gram.values().select(Axis(1), &selection.col_indices);
        let betas = selection
            .col_indices
            .iter()
            .map(|&j| atom_weight(&candidates[j], spec, registry))
            .collect::<Result<Vec<_>>>()?;

        let hidden = if layer == 1 {
            first_layer(&candidates, &selection, xs.ncols(), spec)
        } else {
            let below = bases.last().expect("previous layer");
            let mut rows = Vec::with_capacity(selection.rank());
            let mut biases = Vec::with_capacity(selection.rank());
            let mut cache: HashMap<FunctionId, Array1<f64>> = HashMap::new();
            for &j in &selection.col_indices {
                let atom = candidates[j].as_chain().expect("chain atom above layer 1");
                if !cache.contains_key(&atom.f_ref) {
                    let w = rewrite(below, values_of(&atom.f_ref).to_owned().view(), layer - 1)?;
                    cache.insert(atom.f_ref, w);
                }
                rows.push(cache[&atom.f_ref].clone());
                biases.push(atom.b);
            }
            assemble(rows, biases, width_of(&below.selection), spec)
        };
        layers.push(hidden);
        bases.push(LayerBasis {
            selection,
            columns,
            betas,
        });
    }

    let top = bases.last().expect("depth >= 1");
    let final_rows = roots
        .iter()
        .map(|id| rewrite(top, values_of(id).to_owned().view(), depth))
        .collect::<Result<Vec<_>>>()?;
    let mut final_weights = Array2::zeros((final_rows.len(), width_of(&top.selection)));
    for (o, row) in final_rows.iter().enumerate() {
        final_weights.row_mut(o).assign(row);
    }

    let network = DeepNetwork::new(layers, final_weights)?;
    let norms = network_norm_bounds(&network)?;
    Ok(Extraction {
        network,
        norms,
        selections: bases.into_iter().map(|b| b.selection).collect(),
    })
}

/// Distinct atoms of the given nodes, first occurrence first.
fn distinct_atoms(ids: &[FunctionId], registry: &crate::model::Registry) -> Result<Vec<Atom>> {
    let mut seen = HashSet::new();
    let mut atoms = Vec::new();
    for id in ids {
        for atom in registry.get(id)?.measure().atoms() {
            if seen.insert(atom.key()) {
                atoms.push(atom.clone());
            }
        }
    }
    Ok(atoms)
}

/// A layer whose basis is empty still gets one zero unit so widths stay positive.
fn width_of(sel: &BasisSelection) -> usize {
    sel.rank().max(1)
}

fn first_layer(candidates: &[Atom], sel: &BasisSelection, input_dim: usize, spec: LayerSpec) -> HiddenLayer {
    let rows: Vec<Array1<f64>> = sel
        .col_indices
        .iter()
        .map(|&j| Array1::from(candidates[j].as_layer1().expect("layer-1 atom").v.clone()))
        .collect();
    let biases = sel.col_indices.iter().map(|&j| candidates[j].bias()).collect();
    assemble(rows, biases, input_dim, spec)
}

fn assemble(rows: Vec<Array1<f64>>, biases: Vec<f64>, fan_in: usize, spec: LayerSpec) -> HiddenLayer {
    if rows.is_empty() {
        return HiddenLayer::new(Array2::zeros((1, fan_in)), Array1::zeros(1), spec);
    }
    let mut weights = Array2::zeros((rows.len(), fan_in));
    for (i, row) in rows.iter().enumerate() {
        weights.row_mut(i).assign(row);
    }
    HiddenLayer::new(weights, Array1::from(biases), spec)
}

/// Network weights reading `values` off the units of `basis`: the basis
/// coefficients times each unit's β, since a unit outputs σ(·) without β.
fn rewrite(basis: &LayerBasis, values: ndarray::ArrayView1<f64>, layer: usize) -> Result<Array1<f64>> {
    let (coeffs, residual, scale) = reexpress(&basis.selection, basis.columns.view(), values)?;
    if residual > REEXPRESSION_TOLERANCE * scale || (scale == 0.0 && residual > 0.0) {
        return Err(Error::Extraction { layer, residual });
    }
    if basis.selection.is_empty() {
        return Ok(Array1::zeros(1));
    }
    Ok(coeffs.iter().zip(&basis.betas).map(|(c, beta)| c * beta).collect())
}
