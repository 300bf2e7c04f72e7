use std::fmt;
use std::path::PathBuf;

use crate::corpus::CharSpan;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input at {location}: {detail}")]
    Malformed { location: String, detail: String },

    /// Record-level failures collected while linking a dataset.
    #[error("{} invalid record(s); first: {}", .0.len(), .0.first().map(ToString::to_string).unwrap_or_default())]
    Records(Vec<RecordError>),

    #[error("invalid span [{}, {}) for document {doc_id} of length {doc_len}", span.start, span.end)]
    InvalidSpan {
        doc_id: String,
        span: CharSpan,
        doc_len: usize,
    },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("displacement must be non-zero")]
    ZeroDisplacement,

    #[error("unknown question id {0:?}")]
    UnknownQuestion(String),

    #[error("unknown document id {0:?}")]
    UnknownDocument(String),

    #[error("duplicate prediction for question {0:?}")]
    DuplicatePrediction(String),

    #[error("no prediction for question {0:?}")]
    MissingPrediction(String),

    #[error("spans for question {found:?} mixed into rerank of {expected:?}")]
    MixedQuestions { expected: String, found: String },

    #[error("augmented data was derived from dataset {found}, not {expected}")]
    ProvenanceMismatch { expected: String, found: String },

    #[error("document {0:?} has no tokens")]
    EmptyDocument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(location: impl Into<String>, detail: impl fmt::Display) -> Self {
        Error::Malformed {
            location: location.into(),
            detail: detail.to_string(),
        }
    }

    /// True for errors caused by the content of otherwise readable input.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::Malformed { .. })
    }
}

/// A problem with one question record found while loading.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordError {
    pub question_id: String,
    pub kind: RecordErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RecordErrorKind {
    UnknownDocument(String),
    DuplicateQuestion,
    DuplicateDocument(String),
    EmptyDocument(String),
    SpanOutOfBounds {
        span: CharSpan,
        doc_len: usize,
    },
    AnswerMismatch {
        span: CharSpan,
        expected: String,
        found: String,
    },
}

impl fmt::Display for RecordError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "question {:?}: ", self.question_id)?;
        match &self.kind {
            RecordErrorKind::UnknownDocument(d) => write!(f, "unknown document {d:?}"),
            RecordErrorKind::DuplicateQuestion => write!(f, "duplicate question id"),
            RecordErrorKind::DuplicateDocument(d) => write!(f, "duplicate document id {d:?}"),
            RecordErrorKind::EmptyDocument(d) => write!(f, "document {d:?} has empty text"),
            RecordErrorKind::SpanOutOfBounds { span, doc_len } => write!(
                f,
                "answer span [{}, {}) outside document of length {doc_len}",
                span.start, span.end
            ),
            RecordErrorKind::AnswerMismatch {
                span,
                expected,
                found,
            } => write!(
                f,
                "answer text {expected:?} does not match document text {found:?} at [{}, {})",
                span.start, span.end
            ),
        }
    }
}
