use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate flow: source and destination are both {0}")]
    DegenerateFlow(String),

    #[error("the local port has no wire encoding")]
    InvalidPort,

    #[error("port list overflow: limit of {limit} entries reached")]
    PortListOverflow { limit: usize },

    #[error("invalid path: step {step} leaves the mesh at {at}")]
    InvalidPath { step: usize, at: String },

    #[error("malformed port list: {0}")]
    MalformedPortList(String),

    #[error("protocol corruption: {0}")]
    ProtocolCorruption(String),

    #[error("invariant violated at event {event}: {message}")]
    InvariantViolation { event: u64, message: String },

    #[error("config error{}: {key}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config {
        key: String,
        line: Option<usize>,
        message: String,
    },

    #[error("oracle refused: {0}")]
    OracleGuard(String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, line: Option<usize>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            line,
            message: message.into(),
        }
    }

    /// Process exit status used by the CLI for this error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::OracleGuard(_) | Error::DegenerateFlow(_) => 2,
            Error::Io(_) => 4,
            _ => 3,
        }
    }

    pub fn category(&self) -> &'static str {
        match self.exit_code() {
            2 => "config",
            4 => "io",
            _ => "runtime",
        }
    }
}
