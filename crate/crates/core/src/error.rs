use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Errors produced by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("zero-size tensor")]
    ZeroSize,
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("objective not finite")]
    NonFiniteObjective,
    #[error("length not even: {0}")]
    OddLength(usize),
    #[error("channel count not even: {0}")]
    OddChannels(usize),
    #[error("signal length {len} is not a multiple of {multiple}; pad the input first")]
    Indivisible { len: usize, multiple: usize },
    #[error("window/hop pair not invertible")]
    NotInvertible,
    #[error("undefined SDR: reference signal is all zero")]
    UndefinedSdr,
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("non-finite input signal")]
    NonFiniteInput,
    #[error("training diverged at step {step}: loss is not finite")]
    Diverged { step: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: &[usize], got: &[usize]) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
