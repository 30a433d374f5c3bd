use std::path::Path;

use crate::tokenizer::TokenId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("entity {0} has neither a title nor a label with a description")]
    MissingLabel(String),
    #[error("no label for {0}")]
    UnresolvableLabel(String),
    #[error("malformed fact text: {0}")]
    MalformedFact(String),

    #[error("sequence conflicts with an existing path (one is a strict prefix of the other)")]
    PrefixConflict,
    #[error("prefix is not a path in the fact tree (matched {matched} of {len} tokens)")]
    UnknownPrefix { matched: usize, len: usize },
    #[error("fact has no remaining leaves in this session")]
    AlreadyConsumed,
    #[error("sequence does not end at a complete fact")]
    NotAFact,

    #[error("index write failed: {0}")]
    BackendWrite(String),
    #[error("index read failed: {0}")]
    BackendRead(String),
    #[error("serialization failed: {0}")]
    SerializationFailure(String),
    #[error("prefix not found in index")]
    NotFound,
    #[error("corrupt index record: {0}")]
    CorruptRecord(String),
    #[error("unsupported format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("every fact under the current prefix has already been generated")]
    ExhaustedBranch,
    #[error("token {0} is not allowed at the current position")]
    IllegalToken(TokenId),
    #[error("tokenizer fingerprint mismatch: expected {expected}, found {found}")]
    TokenizerMismatch { expected: String, found: String },
    #[error("logits length {found} does not match vocabulary size {expected}")]
    VocabMismatch { expected: usize, found: usize },

    #[error("no gold record for question {0}")]
    MissingGold(String),
}

impl Error {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// True for errors caused by a damaged or incompatible index file.
    pub fn is_corruption(&self) -> bool {
        matches!(
            self,
            Error::CorruptRecord(_) | Error::UnsupportedVersion { .. } | Error::BackendRead(_)
        )
    }

    /// True for errors raised by the decoding engine.
    pub fn is_engine(&self) -> bool {
        matches!(
            self,
            Error::ExhaustedBranch
                | Error::IllegalToken(_)
                | Error::TokenizerMismatch { .. }
                | Error::VocabMismatch { .. }
                | Error::AlreadyConsumed
                | Error::UnknownPrefix { .. }
        )
    }
}
