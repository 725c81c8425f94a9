use thiserror::Error;

use crate::problem::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numeric overflow at s = {time}: {what}")]
    NumericOverflow { time: f64, what: String },

    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },

    #[error("problem failed validation ({} violation(s)): {}", .0.len(), summarize(.0))]
    Validation(Vec<Violation>),

    #[error("no closed-loop saddle point: {0}")]
    NotRegular(String),

    #[error("non-finite state on path {path} at s = {time}")]
    Divergent { path: usize, time: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn summarize(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
