use dstgtn_tensor::TensorError;
use thiserror::Error;

/// Ingestion, container-format, and split errors (CLI exit code 2).
#[derive(Debug, Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic at byte 0: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated payload at byte {offset}: expected {expected} bytes total, file holds {actual}")]
    Truncated { offset: u64, expected: u64, actual: u64 },
    #[error("extent overflow at byte {offset}: {what} = {value} is not a sane extent")]
    ExtentOverflow { offset: u64, what: &'static str, value: u64 },
    #[error("malformed field at byte {offset}: {what}")]
    Malformed { offset: u64, what: String },
    #[error("timestamp {timestamp} is not aligned to the {interval}s sampling interval")]
    MisalignedTimestamp { timestamp: i64, interval: u32 },
    #[error("timestamps must increase by exactly {interval}s; got step from {prev} to {next}")]
    NonContiguousTimestamps { prev: i64, next: i64, interval: u32 },
    #[error("{split} split holds {len} steps; at least {need} are required for one window")]
    SplitTooShort { split: &'static str, len: usize, need: usize },
    #[error("window range of length {len} cannot hold a {need}-step window")]
    RangeTooShort { len: usize, need: usize },
    #[error("training split is constant; z-score normalization undefined")]
    ConstantData,
    #[error("dataset has no observed values")]
    AllMissing,
    #[error("{0}")]
    Invalid(String),
}

/// Configuration, assembly, and checkpoint errors (CLI exit code 2).
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("config: {0}")]
    Config(String),
    #[error("unknown variant '{name}'; known variants: {known}")]
    UnknownVariant { name: String, known: String },
    #[error("variant 'static_graph' requires a static adjacency matrix")]
    MissingStaticAdjacency,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Numeric failures during optimization or evaluation (CLI exit code 3).
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("batch is fully masked; the loss is undefined")]
    AllMasked,
    #[error("no evaluable points for {metric}")]
    NoEvaluablePoints { metric: &'static str },
    #[error("gradient of parameter '{param}' is NaN at epoch {epoch}")]
    NaNGradient { param: String, epoch: usize },
    #[error("training diverged (NaN loss) at epoch {epoch}")]
    Diverged {
        epoch: usize,
        /// Completed epochs up to the failure, so callers can persist them.
        log: Vec<crate::train::EpochRecord>,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Crate-wide error with a stable CLI exit-code mapping: usage errors exit 1,
/// data/format errors 2, numeric failures 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Data(_) | Error::Model(_) => 2,
            Error::Train(_) | Error::Tensor(_) => 3,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Data(DataError::Io(e))
    }
}
