//! Content-addressed storage of chain functions.
//!
//! A [`FunctionNode`] is one depth-ℓ function given by its atomic measure. Its
//! identifier is the SHA-256 of its canonical JSON form, so two hidden units
//! computing the same sub-function are stored once and every parent refers to
//! the same id. The registry is append-only; nodes never change after insertion.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use super::measure::{Atom, AtomicMeasure};
use super::spec::{ActivationSpec, LayerSpec, WeightingSpec};
use crate::error::{Error, Result};

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FunctionId([u8; 32]);

impl FunctionId {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Display for FunctionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for FunctionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FunctionId({})", &hex::encode(self.0)[..12])
    }
}

impl FromStr for FunctionId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut bytes = [0u8; 32];
        hex::decode_to_slice(s, &mut bytes).map_err(|e| format!("invalid function id '{s}': {e}"))?;
        Ok(Self(bytes))
    }
}

impl Serialize for FunctionId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for FunctionId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One function f ∈ B^depth, f(x) = Σⱼ cⱼ φ^depth(x, wⱼ).
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionNode {
    depth: usize,
    measure: AtomicMeasure,
    activations: Vec<ActivationSpec>,
    weightings: Vec<WeightingSpec>,
}

#[derive(Serialize)]
struct CanonicalNode<'a> {
    activations: &'a [ActivationSpec],
    atoms: &'a [Atom],
    coeffs: &'a [f64],
    depth: usize,
    weightings: &'a [WeightingSpec],
}

impl FunctionNode {
    pub fn new(
        depth: usize,
        measure: AtomicMeasure,
        activations: Vec<ActivationSpec>,
        weightings: Vec<WeightingSpec>,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::contract("chain function depth must be at least 1"));
        }
        if activations.len() != depth || weightings.len() != depth {
            return Err(Error::contract(format!(
                "depth-{depth} function needs {depth} activations and weightings, got {} and {}",
                activations.len(),
                weightings.len()
            )));
        }
        let want_layer1 = depth == 1;
        if measure.atoms().iter().any(|a| a.is_layer1() != want_layer1) {
            return Err(Error::contract(format!(
                "depth-{depth} function must be supported on {} atoms",
                if want_layer1 { "layer-1" } else { "chain" }
            )));
        }
        if want_layer1 {
            let mut dims = measure.atoms().iter().filter_map(Atom::as_layer1).map(|a| a.dim());
            if let Some(d) = dims.next() {
                if dims.any(|e| e != d) {
                    return Err(Error::contract("layer-1 atoms have inconsistent input dimensions"));
                }
            }
        }
        Ok(Self {
            depth,
            measure,
            activations,
            weightings,
        })
    }

    /// Convenience constructor taking per-layer specs.
    pub fn with_layers(measure: AtomicMeasure, layers: &[LayerSpec]) -> Result<Self> {
        Self::new(
            layers.len(),
            measure,
            layers.iter().map(|l| l.activation).collect(),
            layers.iter().map(|l| l.weighting).collect(),
        )
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn measure(&self) -> &AtomicMeasure {
        &self.measure
    }

    pub fn activations(&self) -> &[ActivationSpec] {
        &self.activations
    }

    pub fn weightings(&self) -> &[WeightingSpec] {
        &self.weightings
    }

    /// σ and β of layer `layer` (1-based).
    pub fn layer_spec(&self, layer: usize) -> LayerSpec {
        LayerSpec::new(self.activations[layer - 1], self.weightings[layer - 1])
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        (1..=self.depth).map(|l| self.layer_spec(l)).collect()
    }

    /// ν(f): total variation of the stored measure.
    pub fn norm_bound(&self) -> f64 {
        self.measure.total_variation()
    }

    /// The node as a JSON object with sorted keys.
    pub fn to_json_value(&self) -> serde_json::Value {
        let node = CanonicalNode {
            activations: &self.activations,
            atoms: self.measure.atoms(),
            coeffs: self.measure.coeffs(),
            depth: self.depth,
            weightings: &self.weightings,
        };
        // to_value sorts object keys (serde_json's Map is a BTreeMap)
        serde_json::to_value(node).expect("finite node serializes")
    }

    /// Sorted-key JSON with shortest round-trip number formatting.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(&self.to_json_value()).expect("value serializes")
    }

    pub fn content_id(&self) -> FunctionId {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        let mut bytes = [0u8; 32];
        bytes.copy_from_slice(&digest);
        FunctionId(bytes)
    }
}

#[derive(Debug, Default)]
pub struct Registry {
    nodes: RwLock<HashMap<FunctionId, Arc<FunctionNode>>>,
}

impl Registry {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn len(&self) -> usize {
        self.nodes.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.read().is_empty()
    }

    pub fn contains(&self, id: &FunctionId) -> bool {
        self.nodes.read().contains_key(id)
    }

    pub fn get(&self, id: &FunctionId) -> Result<Arc<FunctionNode>> {
        self.nodes.read().get(id).cloned().ok_or(Error::UnresolvedRef(*id))
    }

    /// Validates `node` against the functions it references and stores it.
    /// Inserting a node that is already present returns the existing id.
    pub fn insert(&self, node: FunctionNode) -> Result<FunctionId> {
        if node.depth > 1 {
            let nodes = self.nodes.read();
            for atom in node.measure.atoms() {
                let chain = atom.as_chain().expect("validated by FunctionNode::new");
                let sub = nodes.get(&chain.f_ref).ok_or(Error::UnresolvedRef(chain.f_ref))?;
                if sub.depth != node.depth - 1 {
                    return Err(Error::contract(format!(
                        "depth-{} function references {} of depth {}",
                        node.depth, chain.f_ref, sub.depth
                    )));
                }
                if sub.activations[..] != node.activations[..sub.depth]
                    || sub.weightings[..] != node.weightings[..sub.depth]
                {
                    return Err(Error::contract(format!(
                        "sub-function {} uses different layer specs than its parent",
                        chain.f_ref
                    )));
                }
            }
        }
        let id = node.content_id();
        self.nodes.write().entry(id).or_insert_with(|| Arc::new(node));
        Ok(id)
    }

    /// Every function reachable from `roots`, grouped by depth: entry ℓ-1 holds
    /// the depth-ℓ ids in first-visit order (roots first, then atoms in order).
    pub fn reachable(&self, roots: &[FunctionId]) -> Result<Vec<Vec<FunctionId>>> {
        let Some(first) = roots.first() else {
            return Ok(Vec::new());
        };
        let depth = self.get(first)?.depth;
        let mut levels = vec![Vec::new(); depth];
        let mut frontier = dedup(roots.iter().copied());
        for level in (1..=depth).rev() {
            let mut next = Vec::new();
            for id in &frontier {
                let node = self.get(id)?;
                if node.depth != level {
                    return Err(Error::contract(format!(
                        "expected depth {level} for {id}, found {}",
                        node.depth
                    )));
                }
                next.extend(node.measure.atoms().iter().filter_map(Atom::as_chain).map(|a| a.f_ref));
            }
            levels[level - 1] = frontier;
            frontier = dedup(next.into_iter());
        }
        Ok(levels)
    }
}

fn dedup(ids: impl Iterator<Item = FunctionId>) -> Vec<FunctionId> {
    let mut seen = HashSet::new();
    ids.filter(|id| seen.insert(*id)).collect()
}

/// A registered function together with the registry that resolves its atoms.
#[derive(Clone, Debug)]
pub struct ChainFunction {
    registry: Arc<Registry>,
    id: FunctionId,
    node: Arc<FunctionNode>,
}

impl ChainFunction {
    pub fn new(registry: &Arc<Registry>, node: FunctionNode) -> Result<Self> {
        let id = registry.insert(node)?;
        Self::from_id(registry, id)
    }

    pub fn from_id(registry: &Arc<Registry>, id: FunctionId) -> Result<Self> {
        let node = registry.get(&id)?;
        Ok(Self {
            registry: Arc::clone(registry),
            id,
            node,
        })
    }

    pub fn id(&self) -> FunctionId {
        self.id
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn node(&self) -> &Arc<FunctionNode> {
        &self.node
    }

    pub fn depth(&self) -> usize {
        self.node.depth
    }

    pub fn measure(&self) -> &AtomicMeasure {
        &self.node.measure
    }

    pub fn activations(&self) -> &[ActivationSpec] {
        &self.node.activations
    }

    pub fn weightings(&self) -> &[WeightingSpec] {
        &self.node.weightings
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.node.layer_specs()
    }

    /// Input dimension d⁰, if any layer-1 atom is reachable.
    pub fn input_dim(&self) -> Result<Option<usize>> {
        let levels = self.registry.reachable(&[self.id])?;
        for id in levels.first().into_iter().flatten() {
            let node = self.registry.get(id)?;
            if let Some(a) = node.measure.atoms().first().and_then(Atom::as_layer1) {
                return Ok(Some(a.dim()));
            }
        }
        Ok(None)
    }
}

impl PartialEq for ChainFunction {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
    }
}
