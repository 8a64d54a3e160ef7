use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{
    Atom, AtomicMeasure, ChainAtom, ChainFunction, DeepNetwork, FunctionNode, Layer1Atom, LayerSpec, Registry,
};

/// Embeds `net` into a fresh registry, one chain function per output row.
pub fn embed_network(net: &DeepNetwork) -> Result<Vec<ChainFunction>> {
    embed_network_into(net, &Registry::new())
}

/// Builds the chain-function form of `net` bottom-up.
///
/// Hidden unit j of layer ℓ+1 reads f_j = W^ℓ_{j·} σ̂^ℓ(⋯), which becomes a
/// depth-ℓ node with coefficients W^ℓ_{jk} / β^ℓ(atom_k). Every such node is
/// registered by content, so identical units collapse into one entry. Output
/// row o gets the measure Σ_k W^L_{ok} / β^L(f_k, b_k) δ_{(f_k, b_k)}.
pub fn embed_network_into(net: &DeepNetwork, registry: &Arc<Registry>) -> Result<Vec<ChainFunction>> {
    let specs = net.layer_specs();
    let first = &net.layers()[0];
    let mut atoms: Vec<Atom> = first
        .weights
        .rows()
        .into_iter()
        .zip(first.bias.iter())
        .map(|(v, &b)| Layer1Atom::new(v.to_vec(), b).into())
        .collect();
    let mut betas = layer1_betas(&atoms, specs[0])?;

    for (depth, layer) in net.layers().iter().enumerate().skip(1) {
        let mut next_atoms = Vec::with_capacity(layer.width());
        let mut next_betas = Vec::with_capacity(layer.width());
        for (row, &b) in layer.weights.rows().into_iter().zip(layer.bias.iter()) {
            let coeffs: Vec<f64> = row.iter().zip(&betas).map(|(w, beta)| w / beta).collect();
            let node = FunctionNode::with_layers(AtomicMeasure::new(atoms.clone(), coeffs)?, &specs[..depth])?;
            let nu = node.norm_bound();
            let id = registry.insert(node)?;
            next_betas.push(layer.weighting.chain(nu, b)?);
            next_atoms.push(ChainAtom::new(id, b).into());
        }
        atoms = next_atoms;
        betas = next_betas;
    }

    net.final_weights()
        .rows()
        .into_iter()
        .map(|row| {
            let coeffs: Vec<f64> = row.iter().zip(&betas).map(|(w, beta)| w / beta).collect();
            let node = FunctionNode::with_layers(AtomicMeasure::new(atoms.clone(), coeffs)?, &specs)?;
            ChainFunction::new(registry, node)
        })
        .collect()
}

fn layer1_betas(atoms: &[Atom], spec: LayerSpec) -> Result<Vec<f64>> {
    atoms
        .iter()
        .map(|a| spec.weighting.layer1(a.as_layer1().expect("layer-1 atoms")))
        .collect()
}

/// Σ_j |W^L_{oj}| / β^L(f_j, b_j) for every output row o, computed by the same
/// bottom-up recursion as the embedding. A zero weight contributes zero even
/// where β is undefined, so networks with dead padding units still get a bound.
pub fn network_norm_bounds(net: &DeepNetwork) -> Result<Vec<f64>> {
    let specs = net.layer_specs();
    let first = &net.layers()[0];
    let mut betas: Vec<Option<f64>> = first
        .weights
        .rows()
        .into_iter()
        .zip(first.bias.iter())
        .map(|(v, &b)| specs[0].weighting.layer1(&Layer1Atom::new(v.to_vec(), b)).ok())
        .collect();
    for layer in net.layers().iter().skip(1) {
        betas = layer
            .weights
            .rows()
            .into_iter()
            .zip(layer.bias.iter())
            .map(|(row, &b)| {
                let nu = weighted_l1(row.iter().copied(), &betas)?;
                Ok(layer.weighting.chain(nu, b).ok())
            })
            .collect::<Result<_>>()?;
    }
    net.final_weights()
        .rows()
        .into_iter()
        .map(|row| weighted_l1(row.iter().copied(), &betas))
        .collect()
}

fn weighted_l1(weights: impl Iterator<Item = f64>, betas: &[Option<f64>]) -> Result<f64> {
    weights.zip(betas).try_fold(0.0, |acc, (w, beta)| {
        if w == 0.0 {
            return Ok(acc);
        }
        match beta {
            Some(beta) => Ok(acc + (w / beta).abs()),
            None => Err(Error::DegenerateWeighting),
        }
    })
}
