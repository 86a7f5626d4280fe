use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed notebook: {0}")]
    MalformedNotebook(String),

    #[error("malformed ingestion manifest: {0}")]
    MalformedManifest(String),

    #[error("empty corpus: no pairs to index")]
    EmptyCorpus,

    #[error("duplicate document id `{0}`")]
    DuplicateDocId(String),

    #[error("unknown document `{0}`")]
    UnknownDoc(String),

    #[error("vector dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,

    #[error("vector has a non-finite component at position {0}")]
    NonFiniteVector(usize),

    #[error("embedding provider unavailable after {attempts} attempt(s): {detail}")]
    ProviderUnavailable { attempts: u32, detail: String },

    #[error("no input texts to embed")]
    EmptyInput,

    #[error("vector index is empty")]
    EmptyIndex,

    #[error("no index for group `{group}` and method `{method}`")]
    IndexMissing { group: String, method: String },

    #[error("pair `{0}` is not part of the queried index")]
    IndexMismatch(String),

    #[error("no index found: expected manifest at {0}")]
    StoreNotFound(PathBuf),

    #[error("corrupt index {path}: {reason}")]
    CorruptIndex { path: PathBuf, reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("index directory {0} is locked by another process")]
    Locked(PathBuf),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
