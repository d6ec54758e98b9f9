use std::path::PathBuf;

/// Error type shared by every module in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty binary: {0}")]
    EmptyBinary(String),

    #[error("invalid width")]
    InvalidWidth,

    #[error("input too small: side {0} is below the minimum of 8")]
    InputTooSmall(usize),

    #[error("unsupported image format: {0}")]
    UnsupportedImage(String),

    #[error("no families found under {0}")]
    NoFamilies(PathBuf),

    #[error("empty family {0}")]
    EmptyFamily(String),

    #[error("manifest already split")]
    AlreadySplit,

    #[error("manifest has no split assignment")]
    NotSplit,

    #[error("invalid cap: cap must be at least 1")]
    InvalidCap,

    #[error("invalid train fraction {0}: must lie in (0, 1)")]
    InvalidTrainFraction(f64),

    #[error("malformed manifest line {line}: {reason}")]
    ManifestParse { line: usize, reason: String },

    #[error("duplicate image path {0}")]
    DuplicatePath(String),

    #[error("unknown family index {0}")]
    UnknownFamilyIndex(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("class {class} out of range [0, {count}) at sample {sample}")]
    LabelOutOfRange {
        class: usize,
        count: usize,
        sample: usize,
    },

    #[error("empty confusion matrix")]
    EmptyMatrix,

    #[error("unknown model {0}")]
    UnknownModel(String),

    #[error("unexpected end of weights file")]
    TruncatedWeights,

    #[error("weights file is not in MVW1 format")]
    BadWeightsMagic,

    #[error("tensor {name}: dims {found:?} do not match model dims {expected:?}")]
    WeightsDimMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("tensor {0} does not correspond to any model parameter")]
    UnknownTensor(String),

    #[error("model expects {model} classes but corpus has {corpus} families")]
    ClassCountMismatch { model: usize, corpus: usize },

    #[error("empty train split")]
    EmptyTrainSplit,

    #[error("no trainable or imported candidate")]
    NoCandidates,

    #[error("no corpus prepared for cap {0}")]
    MissingCorpus(u32),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
