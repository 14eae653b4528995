use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("evidence component {index} is {value}; evidence must be finite and non-negative")]
    InvalidEvidence { index: usize, value: f64 },
    #[error("need at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("invalid Dirichlet parameters: {0}")]
    InvalidOpinion(String),
    #[error("invalid mass set: {0}")]
    InvalidMass(String),
    #[error("uncertainty mass is zero (infinite evidence)")]
    ZeroUncertainty,
    #[error("total conflict between mass sets (K' = {conflict})")]
    TotalConflict { conflict: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("label {label} has a single view in the batch; every anchor needs a positive")]
    SingleViewLabel { label: usize },
    #[error("degenerate embedding: projection output is the zero vector")]
    DegenerateEmbedding,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("activation cache does not match the network")]
    CacheMismatch,
    #[error("image {width}x{height} is too small; the largest kernel needs at least {required}x{required}")]
    ImageTooSmall { width: usize, height: usize, required: usize },
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("split leaves an empty side")]
    EmptySide,
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("sample {index}: {source}")]
    AtSample { index: usize, source: Box<Error> },
}

impl Error {
    pub(crate) fn at_sample(self, index: usize) -> Self {
        Error::AtSample { index, source: Box::new(self) }
    }

    /// The innermost error, with sample context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtSample { source, .. } => source.root(),
            e => e,
        }
    }
}
