//! Error type shared by all modules.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    /// Operand shapes are incompatible for the named operation.
    #[error("shape mismatch in `{op}`: lhs {lhs:?}, rhs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// An argument violates a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Input signal is too short for the requested operation.
    #[error("signal too short for `{op}`: length {len}, need at least {min}")]
    SignalTooShort {
        op: &'static str,
        len: usize,
        min: usize,
    },

    /// A loss target has no energy, so the ratio is undefined.
    #[error("all-zero target for speaker {speaker}")]
    AllZeroTarget { speaker: usize },

    /// A numerical failure (NaN/Inf, singular system, non-convergence).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// NaN or Inf surfaced on the autodiff tape.
    #[error("non-finite value at tape node {node} (op `{op}`)")]
    NonFinite { node: usize, op: &'static str },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("WAV error: {0}")]
    Wav(#[from] hound::Error),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code for the CLI: 2 validation, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) | Error::NonFinite { .. } => 3,
            _ => 2,
        }
    }
}
