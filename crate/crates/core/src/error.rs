use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("too few entries: need at least {needed}, found {found}")]
    TooFewEntries { needed: usize, found: usize },

    #[error("cannot decode video {uri}: {message}")]
    Decode { uri: String, message: String },

    #[error("unsupported codec: {0}")]
    UnsupportedCodec(String),

    #[error("remote service failed after {attempts} attempt(s): {message}")]
    Remote {
        message: String,
        attempts: u32,
        retryable: bool,
    },

    #[error("image backbone unavailable: {0}")]
    BackboneUnavailable(String),

    #[error("sentence encoder unavailable: {0}")]
    EncoderUnavailable(String),

    #[error("entry {id}: {source}")]
    Entry {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("empty corpus: at least one training document is required")]
    EmptyCorpus,

    #[error("feature kind mismatch: {0}")]
    KindMismatch(String),

    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("missing {kind} feature for video {id}")]
    MissingFeature { id: String, kind: String },

    #[error("confusion matrix is empty")]
    EmptyMatrix,

    #[error("label index {label} is outside the {classes}-class vocabulary")]
    LabelOutOfVocabulary { label: usize, classes: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("configuration error: {0}")]
    Config(String),

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

    pub(crate) fn for_entry(id: &str, source: Error) -> Self {
        Error::Entry {
            id: id.to_string(),
            source: Box::new(source),
        }
    }

    /// The innermost error, looking through per-entry wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Entry { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self.root(), Error::Remote { retryable: true, .. })
    }
}
