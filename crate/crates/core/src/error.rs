use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: {detail}")]
    InvalidShape { op: &'static str, detail: String },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("tensor data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("cube {size:?} centred at {center:?} does not fit video extents {video:?}")]
    CubeOutOfRange {
        center: [f64; 3],
        size: [usize; 3],
        video: [usize; 3],
    },
    #[error("enlarged cube {required:?} does not fit video extents {video:?}; video must be at least {required:?}")]
    EnlargedCubeTooLarge {
        required: [usize; 3],
        video: [usize; 3],
    },
    #[error("probability vector sums to {sum}, expected 1")]
    NotNormalized { sum: f64 },
    #[error("budget {budget} is below the glance cost {glance_cost}")]
    InfeasibleBudget { budget: u64, glance_cost: u64 },
    #[error("out-of-order step: expected cube {expected}, got {got}")]
    OutOfOrderStep { expected: usize, got: usize },
    #[error("training diverged at epoch {epoch}, step {step}: loss is {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },
    #[error("unknown layer kind `{0}`")]
    UnknownLayerKind(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("records are inconsistent: {0}")]
    InvalidRecords(String),
}
