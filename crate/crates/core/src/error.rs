use thiserror::Error;

/// Errors raised by the search engine and its supporting modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown {kind} `{key}`")]
    Lookup { kind: &'static str, key: String },

    #[error("relation {relation} is saturated: no negative found for ({head}, {tail}) after {attempts} attempts")]
    Saturated {
        relation: String,
        head: String,
        tail: String,
        attempts: usize,
    },

    #[error("non-finite gradient for `{parameter}` at triple {triple}")]
    NonFiniteGradient { triple: usize, parameter: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("evaluator protocol error: {message} (payload: {excerpt:?})")]
    Protocol { message: String, excerpt: String },

    #[error("evaluation failed at step {step}: {message}")]
    Evaluation { step: usize, message: String },

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn protocol(message: impl Into<String>, payload: &str) -> Self {
        let excerpt: String = payload.chars().take(160).collect();
        Error::Protocol {
            message: message.into(),
            excerpt,
        }
    }
}
