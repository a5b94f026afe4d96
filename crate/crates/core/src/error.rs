use alloc::string::String;

/// Errors raised by the numeric core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("perturbation has zero power, SNR is undefined")]
    ZeroPerturbation,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),
    #[error("invalid arguments: {0}")]
    InvalidArguments(String),
    #[error("unknown utterance {0}")]
    UnknownUtterance(u32),
    #[error("unknown speaker {0}")]
    UnknownSpeaker(u32),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid target speaker index {0}")]
    InvalidTarget(usize),
    #[error("empty input")]
    EmptyInput,
    #[error("input too short: {len} samples, need at least {need}")]
    InputTooShort { len: usize, need: usize },
}

pub type Result<T> = core::result::Result<T, Error>;
