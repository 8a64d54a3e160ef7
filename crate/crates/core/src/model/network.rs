use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::spec::{ActivationSpec, LayerSpec, WeightingSpec};
use crate::error::{Error, Result};

/// One hidden layer: h ↦ σ(W h + b).
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenLayer {
    /// d^ℓ × d^{ℓ-1}.
    pub weights: Array2<f64>,
    /// Length d^ℓ.
    pub bias: Array1<f64>,
    pub activation: ActivationSpec,
    pub weighting: WeightingSpec,
}

impl HiddenLayer {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>, spec: LayerSpec) -> Self {
        Self {
            weights,
            bias,
            activation: spec.activation,
            weighting: spec.weighting,
        }
    }

    pub fn spec(&self) -> LayerSpec {
        LayerSpec::new(self.activation, self.weighting)
    }

    pub fn width(&self) -> usize {
        self.weights.nrows()
    }
}

/// f(x) = W^L σ̂^L(b^L + W^{L-1} σ̂^{L-1}(⋯ σ̂^1(b^1 + W^0 x) ⋯)), with a
/// D × d^L output matrix W^L.
#[derive(Clone, Debug, PartialEq)]
pub struct DeepNetwork {
    layers: Vec<HiddenLayer>,
    final_weights: Array2<f64>,
}

impl DeepNetwork {
    pub fn new(layers: Vec<HiddenLayer>, final_weights: Array2<f64>) -> Result<Self> {
        let Some(first) = layers.first() else {
            return Err(Error::contract("network needs at least one hidden layer"));
        };
        let mut fan_in = first.weights.ncols();
        if fan_in == 0 {
            return Err(Error::contract("input dimension must be positive"));
        }
        for (i, layer) in layers.iter().enumerate() {
            let (rows, cols) = layer.weights.dim();
            if rows == 0 {
                return Err(Error::contract(format!("hidden layer {} has zero width", i + 1)));
            }
            if cols != fan_in {
                return Err(Error::contract(format!(
                    "W^{i} has {cols} columns, expected {fan_in}"
                )));
            }
            if layer.bias.len() != rows {
                return Err(Error::contract(format!(
                    "b^{} has length {}, expected {rows}",
                    i + 1,
                    layer.bias.len()
                )));
            }
            if !all_finite(layer.weights.iter()) || !all_finite(layer.bias.iter()) {
                return Err(Error::contract(format!("layer {} has non-finite entries", i + 1)));
            }
            fan_in = rows;
        }
        let (out, cols) = final_weights.dim();
        if out == 0 || cols != fan_in {
            return Err(Error::contract(format!(
                "final weight matrix is {out}x{cols}, expected Dx{fan_in} with D >= 1"
            )));
        }
        if !all_finite(final_weights.iter()) {
            return Err(Error::contract("final weights have non-finite entries"));
        }
        Ok(Self { layers, final_weights })
    }

    pub fn layers(&self) -> &[HiddenLayer] {
        &self.layers
    }

    pub fn final_weights(&self) -> &Array2<f64> {
        &self.final_weights
    }

    /// Number of hidden layers L.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.final_weights.nrows()
    }

    /// d⁰, d¹, …, d^L.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(HiddenLayer::width))
            .collect()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers.iter().map(HiddenLayer::width).collect()
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(HiddenLayer::spec).collect()
    }

    /// Post-activation values of the last hidden layer.
    pub fn features(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::contract(format!(
                "input has dimension {}, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut h = x.to_owned();
        for layer in &self.layers {
            let mut z = layer.weights.dot(&h);
            z += &layer.bias;
            z.mapv_inplace(|t| layer.activation.apply(t));
            h = z;
        }
        Ok(h)
    }

    pub fn forward(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        Ok(self.final_weights.dot(&self.features(x)?))
    }

    /// N × D outputs for the rows of `xs`.
    pub fn forward_batch(&self, xs: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((xs.nrows(), self.output_dim()));
        for (x, mut row) in xs.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
            row.assign(&self.forward(x)?);
        }
        Ok(out)
    }
}

fn all_finite<'a>(mut it: impl Iterator<Item = &'a f64>) -> bool {
    it.all(|x| x.is_finite())
}
