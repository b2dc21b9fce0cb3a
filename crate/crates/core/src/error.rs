use std::fmt;

/// Errors produced by the engine, the oracles and the file formats.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: {dim} expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        dim: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{context}: {msg}")]
    Invalid { context: &'static str, msg: String },
    #[error("parameter {name} = {given} outside bound [{lower}, {upper}]")]
    OutOfBounds {
        name: String,
        lower: f64,
        upper: f64,
        given: f64,
    },
    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFinite { iteration: u64, detail: String },
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(
        context: &'static str,
        dim: &'static str,
        expected: usize,
        got: usize,
    ) -> Self {
        Error::Shape {
            context,
            dim,
            expected,
            got,
        }
    }

    pub(crate) fn invalid(context: &'static str, msg: impl fmt::Display) -> Self {
        Error::Invalid {
            context,
            msg: msg.to_string(),
        }
    }
}

pub(crate) fn ensure_dim(
    context: &'static str,
    dim: &'static str,
    expected: usize,
    got: usize,
) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::shape(context, dim, expected, got))
    }
}
