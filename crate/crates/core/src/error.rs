use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid document {tool}/{doc}: {msg}")]
    InvalidDocument {
        tool: String,
        doc: String,
        msg: String,
    },

    #[error("duplicate signature {signature:?} in {tool}/{doc} at entry {position}")]
    DuplicateSignature {
        tool: String,
        doc: String,
        signature: String,
        position: usize,
    },

    #[error("record id collision: {0}")]
    RecordIdCollision(String),

    #[error("record {0} has no description tokens")]
    MissingTokens(String),

    #[error("lexicon {0:?} required by technique {1} is empty")]
    MissingLexicon(&'static str, String),

    #[error("unknown technique {0}")]
    UnknownTechnique(String),

    #[error("label for word {0:?} that was never a candidate")]
    UnpresentedWord(String),

    #[error("missing selection labels: {0}")]
    MissingLabels(String),

    #[error("unanswerable query")]
    UnanswerableQuery,

    #[error("k={k} out of range 1..={max}")]
    KOutOfRange { k: usize, max: usize },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("bad model file: {0}")]
    BadModel(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
