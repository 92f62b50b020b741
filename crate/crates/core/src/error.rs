use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    RawIo(#[from] std::io::Error),

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),

    #[error("unsupported wav encoding: {0}")]
    UnsupportedEncoding(String),

    #[error("empty audio")]
    EmptyAudio,

    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    SampleRateMismatch(u32, u32),

    #[error("silent {0} input: power is zero")]
    SilentInput(&'static str),

    #[error("clip of {len} samples is shorter than one window ({window})")]
    ClipTooShort { len: usize, window: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("not enough frames for k-means: {frames} frames, {k} centroids")]
    TooFewFrames { frames: usize, k: usize },

    #[error("depth {depth} out of range [1, {max}]")]
    DepthOutOfRange { depth: usize, max: usize },

    #[error("code index {index} out of range for {size} entries")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),

    #[error("truncated payload: need {needed} bytes, have {available}")]
    TruncatedPayload { needed: usize, available: usize },

    #[error("corrupt stream: {0}")]
    CorruptStream(String),

    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Diverged { iteration: usize, loss: f64 },

    #[error("curves do not overlap in quality: [{ref_lo}, {ref_hi}] vs [{test_lo}, {test_hi}]")]
    NoOverlap {
        ref_lo: f64,
        ref_hi: f64,
        test_lo: f64,
        test_hi: f64,
    },

    #[error("rate-distortion curve '{label}' is not usable: {reason}")]
    InvalidCurve { label: String, reason: String },

    #[error("encoding has no importance map (CBR mode)")]
    MissingImportance,

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
