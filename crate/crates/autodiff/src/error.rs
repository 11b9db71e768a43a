use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("shape mismatch at node {node} ({op}): {detail}")]
    ShapeMismatch {
        node: usize,
        op: &'static str,
        detail: String,
    },
    #[error("non-finite value produced at node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("loss node {node} is not a scalar (shape {shape:?})")]
    NotScalar { node: usize, shape: Vec<usize> },
    #[error("expected {expected} input bindings, got {got}")]
    BindingCount { expected: usize, got: usize },
    #[error("non-finite numeric gradient for `{param}`[{index}]")]
    NonFiniteNumeric { param: String, index: usize },
    #[error("finite-difference step {0} outside [1e-7, 1e-3]")]
    BadStep(f64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
