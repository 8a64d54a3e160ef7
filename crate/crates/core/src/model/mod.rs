//! Domain types shared by every module: activations, weightings, atoms,
//! atomic measures, the function registry, networks and datasets.

mod dataset;
mod measure;
mod network;
mod registry;
mod spec;

pub use dataset::Dataset;
pub use measure::{Atom, AtomicMeasure, ChainAtom, Layer1Atom};
pub use network::{DeepNetwork, HiddenLayer};
pub use registry::{ChainFunction, FunctionId, FunctionNode, Registry};
pub use spec::{eval_activation, eval_weighting, ActivationSpec, LayerSpec, WeightingSpec};
