// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: unknown gate type `{keyword}`")]
    UnknownGate { keyword: String, line: usize },

    #[error("line {line}: malformed statement `{text}`")]
    Syntax { text: String, line: usize },

    #[error("signal `{0}` is referenced but never defined")]
    UndefinedSignal(String),

    #[error("signal `{name}` has more than one driver (line {line})")]
    DuplicateDriver { name: String, line: usize },

    #[error("combinational cycle through `{0}`")]
    CombinationalCycle(String),

    #[error("primary output `{0}` names no existing line")]
    UnknownOutput(String),

    #[error("circuit has no primary inputs")]
    NoPrimaryInputs,

    #[error("circuit has no flip-flops")]
    NoFlipFlops,

    #[error("observation set is empty")]
    EmptyObservation,

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("schema violation at {path}: {message}")]
    Schema { path: String, message: String },

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("non-finite loss at epoch {epoch} on sample {sample}")]
    NonFiniteLoss { epoch: usize, sample: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
