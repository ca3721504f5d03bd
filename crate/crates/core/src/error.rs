use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("extent mismatch: {0}")]
    ExtentMismatch(String),

    #[error("index {index} out of range for order-{order} tensor")]
    IndexOutOfRange { index: usize, order: usize },

    #[error("invalid permutation {0:?}")]
    InvalidPermutation(Vec<usize>),

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("scalar kind mismatch: expected {expected}, found {found}")]
    ScalarKind {
        expected: &'static str,
        found: &'static str,
    },

    #[error("non-finite values in {0}")]
    NonFinite(&'static str),

    #[error("empty index set in matricization")]
    EmptyIndexSet,

    #[error("input value {0} outside [0, 1]")]
    OutOfDomain(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("label index is on site {label_site}, not on bond {bond}")]
    LabelNotOnBond { label_site: usize, bond: usize },

    #[error("environment cache is at bond {cached}, requested bond {requested}")]
    CacheMismatch { cached: usize, requested: usize },

    #[error("cannot advance {direction} from bond {bond}: chain boundary")]
    Boundary {
        bond: usize,
        direction: &'static str,
    },

    #[error("full tensor would hold {0} entries, above the 2^24 guard")]
    SizeGuard(u128),

    #[error("model file format error: {0}")]
    Format(String),

    #[error("IDX format error: {0}")]
    Idx(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("covariance matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("weights are not normalized (norm^2 = {0})")]
    NotNormalized(f64),

    #[error("optimization diverged: {0}")]
    Divergence(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a numeric failure.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::NonFinite(_) | Error::Divergence(_))
    }
}
