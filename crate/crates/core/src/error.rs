use crate::prelude::*;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("input dimension {got} does not match expected {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("outside domain: {0}")]
    Domain(String),
    #[error("training diverged at {stage} {index}: {detail}")]
    Diverged { stage: String, index: usize, detail: String },
    #[error("model is in train mode; jacobians and metrics require eval mode")]
    Nondeterministic,
    #[error("k-nearest-neighbour graph is disconnected; component sizes {sizes:?}")]
    Disconnected { sizes: Vec<usize> },
    #[error("ill-conditioned system: {0}")]
    Conditioning(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("endpoint {index} is off the manifold: s = {score} >= epsilon = {epsilon}")]
    OffManifoldEndpoint { index: usize, score: f64, epsilon: f64 },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
