use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::registry::FunctionId;
use crate::error::{Error, Result};

/// A first-layer parameter w = (v, b).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer1Atom {
    pub v: Vec<f64>,
    pub b: f64,
}

impl Layer1Atom {
    pub fn new(v: Vec<f64>, b: f64) -> Self {
        Self { v, b }
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    pub fn is_finite(&self) -> bool {
        self.b.is_finite() && self.v.iter().all(|x| x.is_finite())
    }
}

/// A parameter (f, b) of layer ℓ ≥ 2, where f is a depth-(ℓ-1) function held
/// in a registry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainAtom {
    #[serde(rename = "f")]
    pub f_ref: FunctionId,
    pub b: f64,
}

impl ChainAtom {
    pub fn new(f_ref: FunctionId, b: f64) -> Self {
        Self { f_ref, b }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Atom {
    Chain(ChainAtom),
    Layer1(Layer1Atom),
}

/// Bitwise identity of an atom, used for duplicate merging.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub(crate) enum AtomKey {
    Layer1(Vec<u64>, u64),
    Chain(FunctionId, u64),
}

impl Atom {
    pub fn bias(&self) -> f64 {
        match self {
            Atom::Layer1(a) => a.b,
            Atom::Chain(a) => a.b,
        }
    }

    pub fn is_layer1(&self) -> bool {
        matches!(self, Atom::Layer1(_))
    }

    pub fn as_layer1(&self) -> Option<&Layer1Atom> {
        match self {
            Atom::Layer1(a) => Some(a),
            Atom::Chain(_) => None,
        }
    }

    pub fn as_chain(&self) -> Option<&ChainAtom> {
        match self {
            Atom::Chain(a) => Some(a),
            Atom::Layer1(_) => None,
        }
    }

    pub(crate) fn key(&self) -> AtomKey {
        match self {
            Atom::Layer1(a) => AtomKey::Layer1(a.v.iter().map(|x| x.to_bits()).collect(), a.b.to_bits()),
            Atom::Chain(a) => AtomKey::Chain(a.f_ref, a.b.to_bits()),
        }
    }

    /// Exact structural equality: every field compared bit for bit.
    pub fn structurally_eq(&self, other: &Atom) -> bool {
        self.key() == other.key()
    }
}

impl From<Layer1Atom> for Atom {
    fn from(a: Layer1Atom) -> Self {
        Atom::Layer1(a)
    }
}

impl From<ChainAtom> for Atom {
    fn from(a: ChainAtom) -> Self {
        Atom::Chain(a)
    }
}

/// A finite signed measure Σⱼ cⱼ δ_{wⱼ}.
///
/// Coefficients follow the embedding convention: they already carry the 1/β
/// factor, so the total variation is the norm bound of the represented function.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AtomicMeasure {
    atoms: Vec<Atom>,
    coeffs: Vec<f64>,
}

impl AtomicMeasure {
    pub fn new(atoms: Vec<Atom>, coeffs: Vec<f64>) -> Result<Self> {
        if atoms.len() != coeffs.len() {
            return Err(Error::contract(format!(
                "measure has {} atoms but {} coefficients",
                atoms.len(),
                coeffs.len()
            )));
        }
        if let Some(first) = atoms.first() {
            if atoms.iter().any(|a| a.is_layer1() != first.is_layer1()) {
                return Err(Error::contract("measure mixes layer-1 and chain atoms"));
            }
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::contract("measure coefficient is not finite"));
        }
        for a in &atoms {
            let finite = match a {
                Atom::Layer1(a) => a.is_finite(),
                Atom::Chain(a) => a.b.is_finite(),
            };
            if !finite {
                return Err(Error::contract("atom parameter is not finite"));
            }
        }
        Ok(Self { atoms, coeffs })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Atom, f64)> {
        self.atoms.iter().zip(self.coeffs.iter().copied())
    }

    /// |μ|(Ω) = Σⱼ |cⱼ|.
    pub fn total_variation(&self) -> f64 {
        self.coeffs.iter().map(|c| c.abs()).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            atoms: self.atoms.clone(),
            coeffs: self.coeffs.iter().map(|c| alpha * c).collect(),
        }
    }

    /// Merges bitwise-identical atoms by summing their coefficients. Atoms keep
    /// the order of their first occurrence.
    pub fn canonicalize(&self) -> Self {
        let mut index: HashMap<AtomKey, usize> = HashMap::with_capacity(self.atoms.len());
        let mut atoms = Vec::with_capacity(self.atoms.len());
        let mut coeffs: Vec<f64> = Vec::with_capacity(self.atoms.len());
        for (atom, c) in self.iter() {
            match index.get(&atom.key()) {
                Some(&i) => coeffs[i] += c,
                None => {
                    index.insert(atom.key(), atoms.len());
                    atoms.push(atom.clone());
                    coeffs.push(c);
                }
            }
        }
        Self { atoms, coeffs }
    }

    /// Drops atoms whose coefficient is exactly zero.
    pub fn pruned(&self) -> Self {
        let (atoms, coeffs) = self
            .iter()
            .filter(|(_, c)| *c != 0.0)
            .map(|(a, c)| (a.clone(), c))
            .unzip();
        Self { atoms, coeffs }
    }

    /// Concatenation μ + ν (not canonicalized).
    pub fn concat(&self, other: &AtomicMeasure) -> Result<Self> {
        let mut atoms = self.atoms.clone();
        atoms.extend(other.atoms.iter().cloned());
        let mut coeffs = self.coeffs.clone();
        coeffs.extend_from_slice(&other.coeffs);
        Self::new(atoms, coeffs)
    }
}
