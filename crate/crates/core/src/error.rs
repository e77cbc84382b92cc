use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, UadError>;

#[derive(Debug, Error)]
pub enum UadError {
    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("malformed NIfTI header: {0}")]
    MalformedHeader(String),

    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),

    #[error("truncated data section: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("bad container magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("container version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("container length mismatch: {0}")]
    LengthMismatch(String),

    #[error("channel {channel} is degenerate: 1% and 99% quantiles are both {value}")]
    DegenerateChannel { channel: usize, value: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("no eligible voxel for sampling")]
    NoEligibleVoxel,

    #[error("patch window at {loc:?} with side {side} exits the volume")]
    OutOfBounds { loc: [usize; 3], side: usize },

    #[error("need at least {needed} subjects, got {got}")]
    TooFewSubjects { needed: usize, got: usize },

    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: String },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("sample variance is zero")]
    ZeroVariance,

    #[error("solver did not converge after {iterations} iterations (max KKT violation {violation:e})")]
    NotConverged { iterations: usize, violation: f64 },

    #[error("only {distinct} distinct samples for {k} components")]
    TooFewDistinct { distinct: usize, k: usize },

    #[error("not enough samples: need {needed}, got {got}")]
    NotEnoughSamples { needed: usize, got: usize },

    #[error("single-class input: {0}")]
    SingleClass(String),

    #[error("stratum {stratum} has {size} subject(s), too few to split")]
    StratumTooSmall { stratum: String, size: usize },

    #[error("anomaly does not fit inside the foreground: {0}")]
    AnomalyOutsideForeground(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("stage `{stage}` failed on {path}: {source}")]
    Stage {
        stage: String,
        path: PathBuf,
        #[source]
        source: Box<UadError>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl UadError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        UadError::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps an error with the pipeline stage and file it came from.
    pub fn in_stage(self, stage: &str, path: impl Into<PathBuf>) -> Self {
        match self {
            e @ UadError::Stage { .. } => e,
            e => UadError::Stage {
                stage: stage.to_string(),
                path: path.into(),
                source: Box::new(e),
            },
        }
    }
}
