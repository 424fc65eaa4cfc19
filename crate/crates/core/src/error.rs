//! Error type shared by every module of the crate.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Stable machine-readable error codes. These travel over the wire in
/// `{code, message}` bodies, so the string forms must not change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    SchemaError,
    CycleError,
    DanglingRef,
    GrammarMismatch,
    MissingDetection,
    NotTerminal,
    NoChildren,
    NoParent,
    NonpositiveSigma,
    EmptyPg,
    ZeroContent,
    NotDetected,
    EmptyLogs,
    NoValidAction,
    ZeroCost,
    PoolTooSmall,
    NonfiniteGradient,
    Exhausted,
    ConflictingAnswer,
    NoGames,
    Range,
    UnknownScene,
    UnknownTask,
    UnknownQuestion,
    UnknownSession,
    WrongPhase,
    TurnLimit,
    NoBubblesYet,
    AlreadyAttempted,
    ConfigError,
    CheckpointMismatch,
    CheckpointError,
    BindError,
    EmptyDir,
    Io,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        use ErrorCode::*;
        match self {
            SchemaError => "SCHEMA_ERROR",
            CycleError => "CYCLE_ERROR",
            DanglingRef => "DANGLING_REF",
            GrammarMismatch => "GRAMMAR_MISMATCH",
            MissingDetection => "MISSING_DETECTION",
            NotTerminal => "NOT_TERMINAL",
            NoChildren => "NO_CHILDREN",
            NoParent => "NO_PARENT",
            NonpositiveSigma => "NONPOSITIVE_SIGMA",
            EmptyPg => "EMPTY_PG",
            ZeroContent => "ZERO_CONTENT",
            NotDetected => "NOT_DETECTED",
            EmptyLogs => "EMPTY_LOGS",
            NoValidAction => "NO_VALID_ACTION",
            ZeroCost => "ZERO_COST",
            PoolTooSmall => "POOL_TOO_SMALL",
            NonfiniteGradient => "NONFINITE_GRADIENT",
            Exhausted => "EXHAUSTED",
            ConflictingAnswer => "CONFLICTING_ANSWER",
            NoGames => "NO_GAMES",
            Range => "RANGE",
            UnknownScene => "UNKNOWN_SCENE",
            UnknownTask => "UNKNOWN_TASK",
            UnknownQuestion => "UNKNOWN_QUESTION",
            UnknownSession => "UNKNOWN_SESSION",
            WrongPhase => "WRONG_PHASE",
            TurnLimit => "TURN_LIMIT",
            NoBubblesYet => "NO_BUBBLES_YET",
            AlreadyAttempted => "ALREADY_ATTEMPTED",
            ConfigError => "CONFIG_ERROR",
            CheckpointMismatch => "CHECKPOINT_MISMATCH",
            CheckpointError => "CHECKPOINT_ERROR",
            BindError => "BIND_ERROR",
            EmptyDir => "EMPTY_DIR",
            Io => "IO_ERROR",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{code}: {message}")]
pub struct Error {
    pub code: ErrorCode,
    pub message: String,
}

impl Error {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Error {
            code,
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::new(ErrorCode::Io, e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Shorthand for `Err(Error::new(code, msg))`.
pub(crate) fn fail<T>(code: ErrorCode, message: impl Into<String>) -> Result<T> {
    Err(Error::new(code, message))
}
