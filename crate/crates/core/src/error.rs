use thiserror::Error;

use crate::stability::TestDecision;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or out-of-range input.
    #[error("invalid input: {0}")]
    Validation(String),

    /// Input is well formed but carries too little information to proceed
    /// (e.g. fewer than two positive weights).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("singular system over features [{}]", .features.join(", "))]
    Singular { features: Vec<String> },

    #[error("model query failed in batch {batch}: {message}{}", excerpt_suffix(.excerpt))]
    ModelQuery {
        batch: usize,
        message: String,
        excerpt: Option<String>,
    },

    #[error("parse error at column {column}: {message}")]
    Parse { column: usize, message: String },

    /// An adaptive explanation run failed part-way; the tests run so far are kept.
    #[error("explanation aborted at n = {n}: {source}")]
    Aborted {
        #[source]
        source: Box<Error>,
        n: usize,
        trace: Vec<TestDecision>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn excerpt_suffix(excerpt: &Option<String>) -> String {
    match excerpt {
        Some(e) => format!(" (payload: {e})"),
        None => String::new(),
    }
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// The innermost error, looking through [`Error::Aborted`].
    pub fn root(&self) -> &Error {
        match self {
            Error::Aborted { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_model_query(&self) -> bool {
        matches!(self.root(), Error::ModelQuery { .. })
    }

    pub fn is_validation(&self) -> bool {
        matches!(
            self.root(),
            Error::Validation(_) | Error::Degenerate(_) | Error::Parse { .. }
        )
    }
}

/// Truncate a raw payload for inclusion in an error message.
pub(crate) fn excerpt(raw: &str) -> String {
    const LIMIT: usize = 120;
    let trimmed = raw.trim_end();
    if trimmed.chars().count() <= LIMIT {
        trimmed.to_string()
    } else {
        let head: String = trimmed.chars().take(LIMIT).collect();
        format!("{head}...")
    }
}
