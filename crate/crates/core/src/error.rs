use thiserror::Error;

use crate::session::UserId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate docno {0:?} in collection")]
    DuplicateDocno(String),

    #[error("collection contains no documents")]
    EmptyCollection,

    #[error("line {line}: {message}")]
    Corpus { line: usize, message: String },

    #[error("index snapshot: {0}")]
    Snapshot(String),

    #[error("index snapshot version mismatch: expected SCIRIDX1, found {0:?}")]
    SnapshotVersion(String),

    #[error("authority weights are all zero for collaborative_weighted feedback")]
    ZeroAuthority,

    #[error("no authority weight supplied for user {0}")]
    MissingAuthority(UserId),

    #[error("unknown feedback mode {0:?}")]
    UnknownMode(String),

    #[error("unknown division-of-labour policy {0:?}")]
    UnknownPolicy(String),

    #[error("script line {line}: {message}")]
    Script { line: usize, message: String },

    #[error("group needs at least two scripts, got {0}")]
    TooFewScripts(usize),

    #[error("user {0} appears in more than one script")]
    DuplicateUser(UserId),

    #[error("event for unknown user {0}")]
    UnknownUser(UserId),

    #[error("qrels line {line}: {message}")]
    Qrels { line: usize, message: String },

    #[error("invalid synthetic collection spec: {0}")]
    Spec(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
