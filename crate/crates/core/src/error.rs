use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("tensor data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("parameter `{0}` has no gradient; run backward before the optimizer step")]
    MissingGradient(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid raw frame: {0}")]
    Raw(String),

    #[error("empty burst")]
    EmptyBurst,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("parameter mismatch: {0}")]
    ParamMismatch(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
