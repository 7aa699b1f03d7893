use thiserror::Error;

#[derive(Debug, Error)]
pub enum QecError {
    #[error("invalid code distance {distance} for {code}: {reason}")]
    InvalidDistance {
        code: &'static str,
        distance: usize,
        reason: &'static str,
    },

    #[error("size mismatch: expected {expected}, got {actual} ({what})")]
    SizeMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("residual operator has a nonzero syndrome ({defects} defects); the correction is invalid")]
    InvalidCorrection { defects: usize },

    #[error("matching graph has an odd vertex count ({0})")]
    OddVertexCount(usize),

    #[error("matching graph contains a non-finite weight between {0} and {1}")]
    NonFiniteWeight(usize, usize),

    #[error("brute-force matching supports at most {max} vertices, got {n}")]
    TooManyVertices { n: usize, max: usize },

    #[error("ground-truth search gave up after {elapsed_ms} ms (exhausted: {exhausted})")]
    GroundTruthTimeout { elapsed_ms: u64, exhausted: bool },

    #[error("no threshold crossing in the supplied grid")]
    NoCrossing,

    #[error("curves for L={0} and L={1} are identical; crossing is undefined")]
    DegenerateCrossing(usize, usize),

    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot([usize; 2]),

    #[error("length mismatch: {0} probabilities vs {1} labels")]
    LengthMismatch(usize, usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = QecError> = std::result::Result<T, E>;
