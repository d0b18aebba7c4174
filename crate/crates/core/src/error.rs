use alloc::string::String;

/// Errors raised by the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("unknown symbol `{label}` at position {position}")]
    UnknownLabel { label: String, position: usize },
    #[error("unregistered special token `{0}`")]
    UnregisteredToken(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("missing alignment for utterance `{0}`")]
    MissingAlignment(String),
    #[error("non-finite value in {component}")]
    NonFinite { component: &'static str },
    #[error("incompatible symbol tables: {0}")]
    IncompatibleSymbols(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
