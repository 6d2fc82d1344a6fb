use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-wide error type.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("document produced {nodes} nodes, exceeding the limit of {limit}")]
    OversizeDocument { nodes: usize, limit: usize },

    #[error("page has no domain but the model is configured with domain features")]
    MissingDomain,

    #[error("tree already carries a domain node")]
    DuplicateDomain,

    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("referenced file is missing: {path}")]
    FileMissing { path: PathBuf },

    #[error("corpus contains no documents")]
    EmptyCorpus,

    #[error("dataset contains no pages")]
    EmptyDataset,

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("non-finite gradient in parameter `{param}`; step aborted")]
    NonFiniteGradient { param: String },

    #[error("non-finite loss at epoch {epoch}, sample {sample}")]
    NonFiniteLoss { epoch: usize, sample: usize },

    #[error("threshold calibration needs both classes in the validation set")]
    CalibrationDegenerate,

    #[error("config error: {0}")]
    Config(String),

    #[error("unsupported bundle format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u64, supported: u64 },

    #[error("corrupt bundle: {0}")]
    CorruptBundle(String),
}

impl Error {
    pub fn shape(expected: impl std::fmt::Debug, got: impl std::fmt::Debug) -> Self {
        Error::Shape {
            expected: format!("{expected:?}"),
            got: format!("{got:?}"),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoFailure {
            path: path.into(),
            source,
        }
    }
}
