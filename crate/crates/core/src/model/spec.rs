//! Declarative activation and weighting descriptions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::measure::{Atom, Layer1Atom};
use crate::error::{Error, Result};

/// Above this argument softplus switches to `t + log1p(exp(-t))`.
const SOFTPLUS_BRANCH: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationSpec {
    Relu,
    Softplus,
    Tanh,
    Sigmoid,
    Identity,
}

impl ActivationSpec {
    pub const ALL: [ActivationSpec; 5] = [
        ActivationSpec::Relu,
        ActivationSpec::Softplus,
        ActivationSpec::Tanh,
        ActivationSpec::Sigmoid,
        ActivationSpec::Identity,
    ];

    /// Evaluates σ without checking finiteness. Hot loops use this after the
    /// inputs have been validated.
    #[inline]
    pub fn apply(self, t: f64) -> f64 {
        match self {
            ActivationSpec::Relu => t.max(0.0),
            ActivationSpec::Softplus => {
                if t > SOFTPLUS_BRANCH {
                    t + (-t).exp().ln_1p()
                } else {
                    t.exp().ln_1p()
                }
            }
            ActivationSpec::Tanh => t.tanh(),
            ActivationSpec::Sigmoid => {
                if t >= 0.0 {
                    1.0 / (1.0 + (-t).exp())
                } else {
                    let e = t.exp();
                    e / (1.0 + e)
                }
            }
            ActivationSpec::Identity => t,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActivationSpec::Relu => "relu",
            ActivationSpec::Softplus => "softplus",
            ActivationSpec::Tanh => "tanh",
            ActivationSpec::Sigmoid => "sigmoid",
            ActivationSpec::Identity => "identity",
        }
    }
}

impl fmt::Display for ActivationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActivationSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ActivationSpec::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown activation '{s}'"))
    }
}

/// σ(t) for finite `t`.
pub fn eval_activation(spec: ActivationSpec, t: f64) -> Result<f64> {
    if !t.is_finite() {
        return Err(Error::NonFinite("eval_activation"));
    }
    Ok(spec.apply(t))
}

/// The weighting β attached to every atom of a layer.
///
/// * `unit`: β ≡ 1.
/// * `inverse_affine`: β = (1 + ‖v‖₂ + |b|)⁻¹ on layer-1 atoms; on chain atoms
///   the role of ‖v‖ is played by the norm bound ν(f).
/// * `inverse_norm_bias`: β = (ν(f) + |b|)⁻¹ on chain atoms. On layer-1 atoms
///   ν of the linear map x ↦ ⟨v, x⟩ is taken to be ‖v‖₁, which makes the
///   recursive norm bound of a zero-bias ReLU network equal its path norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingSpec {
    Unit,
    InverseAffine,
    InverseNormBias,
}

impl WeightingSpec {
    pub const ALL: [WeightingSpec; 3] = [
        WeightingSpec::Unit,
        WeightingSpec::InverseAffine,
        WeightingSpec::InverseNormBias,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WeightingSpec::Unit => "unit",
            WeightingSpec::InverseAffine => "inverse_affine",
            WeightingSpec::InverseNormBias => "inverse_norm_bias",
        }
    }

    /// β for a layer-1 atom.
    pub fn layer1(self, atom: &Layer1Atom) -> Result<f64> {
        match self {
            WeightingSpec::Unit => Ok(1.0),
            WeightingSpec::InverseAffine => {
                let norm = atom.v.iter().map(|x| x * x).sum::<f64>().sqrt();
                Ok(1.0 / (1.0 + norm + atom.b.abs()))
            }
            WeightingSpec::InverseNormBias => {
                let l1 = atom.v.iter().map(|x| x.abs()).sum::<f64>();
                inverse(l1 + atom.b.abs())
            }
        }
    }

    /// β for a chain atom `(f, b)` given ν(f).
    pub fn chain(self, norm_bound: f64, b: f64) -> Result<f64> {
        match self {
            WeightingSpec::Unit => Ok(1.0),
            WeightingSpec::InverseAffine => Ok(1.0 / (1.0 + norm_bound + b.abs())),
            WeightingSpec::InverseNormBias => inverse(norm_bound + b.abs()),
        }
    }
}

fn inverse(denominator: f64) -> Result<f64> {
    if denominator > 0.0 {
        Ok(1.0 / denominator)
    } else {
        Err(Error::DegenerateWeighting)
    }
}

impl fmt::Display for WeightingSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WeightingSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        WeightingSpec::ALL
            .into_iter()
            .find(|w| w.as_str() == s)
            .ok_or_else(|| format!("unknown weighting '{s}'"))
    }
}

/// β(atom). Chain atoms need the norm bound of the function they reference
/// unless the weighting is `unit`.
pub fn eval_weighting(spec: WeightingSpec, atom: &Atom, norm_bound_of_f: Option<f64>) -> Result<f64> {
    match atom {
        Atom::Layer1(a) => spec.layer1(a),
        Atom::Chain(a) => match (spec, norm_bound_of_f) {
            (WeightingSpec::Unit, _) => Ok(1.0),
            (_, Some(nu)) => spec.chain(nu, a.b),
            (_, None) => Err(Error::contract(format!(
                "{spec} weighting of a chain atom needs the norm bound of its sub-function"
            ))),
        },
    }
}

/// σ and β of one layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerSpec {
    pub activation: ActivationSpec,
    pub weighting: WeightingSpec,
}

impl LayerSpec {
    pub fn new(activation: ActivationSpec, weighting: WeightingSpec) -> Self {
        Self { activation, weighting }
    }
}
