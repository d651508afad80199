use std::path::PathBuf;

/// Errors produced by the segmentation engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("softmax row {row} has no unmasked entry")]
    DegenerateRow { row: usize },

    #[error("cosine similarity undefined for a zero-norm vector")]
    UndefinedSimilarity,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("grammar error: {0}")]
    Grammar(String),

    #[error("cannot normalize a zero embedding for {0:?}")]
    Normalization(String),

    #[error("at least 2 prompt variants per class are required, got {0}")]
    InsufficientVariants(usize),

    #[error("at least 2 classes are required, got {0}")]
    InsufficientClasses(usize),

    #[error("model {index} has non-positive separation margin {score}")]
    NonPositiveMargin { index: usize, score: f64 },

    #[error("incompatible checkpoints: {0}")]
    IncompatibleCheckpoint(String),

    #[error("weight error: {0}")]
    Weight(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("no class has a defined IoU (every class has zero union)")]
    EmptyEvaluation,

    #[error("malformed {kind} file: {msg}")]
    Format { kind: &'static str, msg: String },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    /// Attach the path of the file being processed.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
