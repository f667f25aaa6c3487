use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch, expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("unknown parameter id `{0}`")]
    UnknownParam(String),

    #[error("gradient requested for an untracked leaf (node {0})")]
    UntrackedLeaf(usize),

    #[error("batch normalization in layer {layer} has no frozen statistics; finalize before inference")]
    BnNotFinalized { layer: usize },

    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    #[error("inner gradient descent diverged at inner step {inner_step} of outer step {outer_step}")]
    Divergence { outer_step: usize, inner_step: usize },

    #[error("conjugate gradient did not reach relative residual {tol:e} in {iters} iterations")]
    CgNotConverged { iters: usize, tol: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
