// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

/// Every failure the toolkit reports.
///
/// Each variant maps onto a stable [`Error::category`] string, which the CLI
/// prints as `ERROR:<category>:` so scripts can match on it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("tensor `{name}` has shape {got:?}, expected {expected:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("out of range: {0}")]
    Range(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("tokenizer inconsistency: {0}")]
    Tokenizer(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("ambiguous: {0}")]
    Ambiguous(String),
    #[error("cannot construct synthetic model: {0}")]
    Construction(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("parse error at line {line}: {message}")]
    ParseLine { line: usize, message: String },
    #[error("parse error: {message} (raw reply: {raw:?})")]
    Reply { message: String, raw: String },
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("incomplete annotations: {0}")]
    Completeness(String),
    #[error("unsupported frame `{0}` (giveaway words exist only for Strict Father and Nurturing Parent)")]
    UnsupportedFrame(String),
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("request rejected with HTTP {status}: {body}")]
    Request { status: u16, body: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape(_) | Error::TensorShape { .. } => "shape",
            Error::MissingTensor(_) => "missing-tensor",
            Error::NonFinite(_) => "non-finite",
            Error::Range(_) => "range",
            Error::Capacity(_) => "capacity",
            Error::Config(_) => "config",
            Error::Format(_) => "format",
            Error::Tokenizer(_) => "tokenizer",
            Error::NotFound(_) => "not-found",
            Error::Ambiguous(_) => "ambiguous",
            Error::Construction(_) => "construction",
            Error::DegenerateData(_) => "degenerate-data",
            Error::InsufficientData(_) => "insufficient-data",
            Error::Validation(_) => "validation",
            Error::ParseLine { .. } | Error::Reply { .. } | Error::Json(_) => "parse",
            Error::Alignment(_) => "alignment",
            Error::Completeness(_) => "completeness",
            Error::UnsupportedFrame(_) => "unsupported-frame",
            Error::Transport { .. } => "transport",
            Error::Protocol(_) => "protocol",
            Error::Request { .. } => "request",
            Error::Io(_) => "io",
        }
    }

    /// True for failures of the remote service rather than of local data.
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            Error::Transport { .. } | Error::Protocol(_) | Error::Request { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
