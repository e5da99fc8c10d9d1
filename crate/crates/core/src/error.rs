use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("wav parse error in chunk `{chunk}`: {reason}")]
    WavParse { chunk: String, reason: String },

    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("shape mismatch at layer {index} ({layer}): {reason}")]
    LayerShape { index: usize, layer: String, reason: String },

    #[error("index {index} out of range for {len} classes")]
    ClassIndex { index: usize, len: usize },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("insufficient segments: {}", format_shortfalls(.0))]
    Shortfall(Vec<Shortfall>),

    #[error("non-finite loss {loss} (epoch {epoch:?}, batch {batch:?}); layer parameter norms: {norms:?}")]
    NonFiniteLoss {
        loss: f64,
        epoch: Option<usize>,
        batch: Option<usize>,
        norms: Vec<(String, f64)>,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint truncated while reading {0}")]
    Truncated(String),

    #[error("checkpoint version mismatch: file has {found}, expected {expected}")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("preprocessing mismatch: model expects {expected}, input has {found}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("contamination class `{0}` present in classifier training data")]
    ContaminationInTraining(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("AUROC undefined: evaluation set contains only one class")]
    SingleClass,

    #[error("output path collision: {0}")]
    PathCollision(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shortfall {
    pub class: String,
    pub available: usize,
    pub requested: usize,
}

fn format_shortfalls(list: &[Shortfall]) -> String {
    list.iter()
        .map(|s| format!("{} has {} of {} requested", s.class, s.available, s.requested))
        .collect::<Vec<_>>()
        .join("; ")
}
