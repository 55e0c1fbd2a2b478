// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: {message}")]
    InvalidShape { op: &'static str, message: String },

    /// A primitive produced NaN or infinity. `location` names the scope the
    /// forward pass was in (for example `layer 2 head 1`).
    #[error("{op}: non-finite value{}", location.as_ref().map(|l| format!(" at {l}")).unwrap_or_default())]
    NonFinite {
        op: &'static str,
        location: Option<String>,
    },

    #[error("graph: {0}")]
    Graph(String),

    #[error("finite differences: {0}")]
    FiniteDifference(String),

    #[error("archive {path}: {message}")]
    Archive { path: PathBuf, message: String },

    #[error("config: {0}")]
    Config(String),

    #[error("tokenizer: {0}")]
    Tokenizer(String),

    #[error("word lists: {0}")]
    WordLists(String),

    #[error("words with zero corpus occurrences: {}", .0.join(", "))]
    MissingWords(Vec<String>),

    #[error("zero-norm embedding{}", .0.as_ref().map(|w| format!(" for `{w}`")).unwrap_or_default())]
    ZeroNorm(Option<String>),

    #[error("degenerate SEAT denominator")]
    DegenerateSeat,

    #[error("statistics: {0}")]
    Statistics(String),

    #[error("corpus: {0}")]
    Corpus(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    /// Whether the error stems from numerics (non-finite values, degenerate
    /// statistics) rather than from malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::ZeroNorm(_)
                | Error::DegenerateSeat
                | Error::FiniteDifference(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
