// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown field id {0} (catalog has 165 fields)")]
    UnknownField(usize),

    #[error("wrong length: expected {expected} bytes, got {actual}")]
    WrongLength { expected: usize, actual: usize },

    #[error("{what}: input slice too short ({actual} bytes, need at least {needed})")]
    ShortInput { what: &'static str, needed: usize, actual: usize },

    #[error("malformed fuzz input: {0}")]
    MalformedInput(String),

    #[error("invalid campaign config: {0}")]
    InvalidConfig(String),

    #[error("missing record {}", .0.display())]
    MissingRecord(PathBuf),

    #[error("corrupt record {}: {reason}", path.display())]
    CorruptRecord { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn ensure_len(what: &'static str, slice: &[u8], needed: usize) -> Result<()> {
    if slice.len() < needed {
        Err(Error::ShortInput { what, needed, actual: slice.len() })
    } else {
        Ok(())
    }
}
