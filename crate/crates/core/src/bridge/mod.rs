//! Conversion between deep networks and chain functions, in both directions.

mod basis;
mod embed;
mod extract;

pub use basis::{
    interpolation_coefficients, reexpress, select_basis, BasisSelection, DEFAULT_PIVOT_THRESHOLD,
};
pub use embed::{embed_network, embed_network_into, network_norm_bounds};
pub use extract::{extract_network, Extraction, REEXPRESSION_TOLERANCE};
