use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("bag `{id}` has no instances")]
    EmptyBag { id: String },

    #[error("bag `{id}` contains a non-finite feature value")]
    NonFiniteFeature { id: String },

    #[error("invalid label {0}: expected +1 or -1")]
    InvalidLabel(i64),

    #[error("a dataset needs at least 2 bags, found {0}")]
    TooFewBags(usize),

    #[error("no {0} bags present")]
    MissingClass(&'static str),

    #[error("{class} class has {count} members, fewer than the {k} folds requested")]
    ClassTooSmall { class: &'static str, count: usize, k: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("warm start is not a feasible dual point: {0}")]
    InvalidWarmStart(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
}

impl Error {
    /// True for failures of the numerical routines rather than of the input data.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::InvalidWarmStart(_))
    }
}
