use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid schema: {0}")]
    SchemaInvalid(String),

    #[error("column `{0}` is not a schema field")]
    UnknownColumn(String),

    #[error("timestamp column `{0}` is missing")]
    MissingTimestamp(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid split ratios {0:?}: must be positive and sum to 1")]
    InvalidRatios((f64, f64, f64)),

    #[error("no data rows")]
    EmptyData,

    #[error("feature layouts differ ({0} vs {1} features)")]
    LayoutMismatch(usize, usize),

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("variable `{var}` has no state `{state}`")]
    UnknownState { var: String, state: String },

    #[error("query variable `{0}` is also observed")]
    QueryObserved(String),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("joint state space too large ({0} assignments)")]
    JointTooLarge(u128),

    #[error("target `{0}` has a single class in the training data")]
    TargetConstant(String),

    #[error("unknown target field `{0}`")]
    UnknownTarget(String),

    #[error("target `{0}` is already filled")]
    TargetFilled(String),

    #[error("bundle schema hash {found} does not match schema {expected}")]
    SchemaMismatch { expected: String, found: String },

    #[error("unsupported bundle version {0}")]
    BundleVersion(u32),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
