use crate::model::FunctionId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A scalar routine received NaN or an infinity.
    #[error("non-finite argument to {0}")]
    NonFinite(&'static str),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("function {0} is not in the registry")]
    UnresolvedRef(FunctionId),

    /// `inverse_norm_bias` at an atom with ν(f) + |b| = 0 has no finite weight.
    #[error("inverse_norm_bias weighting is undefined when norm bound and bias are both zero")]
    DegenerateWeighting,

    #[error("nonzero values cannot be interpolated by an empty basis")]
    Infeasible,

    #[error("extraction failed at layer {layer}: re-expression residual {residual:e} exceeds tolerance")]
    Extraction { layer: usize, residual: f64 },

    #[error("dead candidate pool at layer {layer}: every Gram column vanishes on the data")]
    DeadPool { layer: usize },

    #[error("schema error at '{pointer}': {message}")]
    Schema { pointer: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn schema(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            pointer: pointer.into(),
            message: message.into(),
        }
    }

    /// True for failures caused by the numerics rather than by malformed input.
    pub fn is_runtime(&self) -> bool {
        matches!(
            self,
            Error::DegenerateWeighting
                | Error::Infeasible
                | Error::Extraction { .. }
                | Error::DeadPool { .. }
        )
    }
}
