//! Neural chain reproducing kernel Banach spaces over finite atomic measures.
//!
//! Functions of depth L are finite sums f(x) = Σⱼ cⱼ σ^L(f_j(x) + b_j) β^L(f_j, b_j)
//! whose atoms reference depth-(L-1) functions held in a content-addressed
//! [`Registry`]. The crate converts deep networks into that form and back,
//! fits the 1-norm regularized least-squares problem in representer form and
//! computes norm and capacity diagnostics.
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`model`] | activations, weightings, atoms, measures, networks, datasets |
//! | [`kernel`] | layer kernels, evaluation, Gram matrices, norm bounds |
//! | [`bridge`] | network ⇄ chain function conversion, basis selection |
//! | [`erm`] | candidate pools, coordinate descent, the fitting pipeline |
//! | [`analysis`] | path norm, bias elimination, Rademacher/Gaussian complexity |
//! | [`io`] | JSON and CSV file formats |

pub mod analysis;
pub mod bridge;
pub mod erm;
mod error;
pub mod io;
pub mod kernel;
pub mod model;

pub use error::{Error, Result};
pub use kernel::{eval_chain, eval_chain_batch, gram_matrix, norm_upper_bound, GramMatrix};
pub use model::{
    ActivationSpec, Atom, AtomicMeasure, ChainAtom, ChainFunction, Dataset, DeepNetwork, FunctionId,
    FunctionNode, HiddenLayer, Layer1Atom, LayerSpec, Registry, WeightingSpec,
};
pub use analysis::{path_norm, ComplexityEstimate, ComplexityKind, NoiseDraws};
pub use bridge::{embed_network, extract_network, select_basis, BasisSelection};
pub use erm::{fit_erm, FitConfig, FitResult};
