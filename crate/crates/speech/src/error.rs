use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpeechError {
    #[error(transparent)]
    Core(#[from] comedic_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("audio {path}: {message}")]
    Audio { path: PathBuf, message: String },
    #[error("duplicate utterance id `{id}` at {path}:{line}")]
    DuplicateUtterance { path: PathBuf, line: usize, id: String },
    #[error("checkpoint fingerprint mismatch in {0}")]
    Fingerprint(PathBuf),
    #[error("training diverged at step {step}: {source}")]
    Diverged {
        step: u64,
        #[source]
        source: comedic_core::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

impl SpeechError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SpeechError::Io { path: path.into(), source }
    }

    /// Short machine-readable category for error records.
    pub fn kind(&self) -> &'static str {
        use comedic_core::Error as C;
        match self {
            SpeechError::Core(e) => match e {
                C::UnknownLabel { .. } => "unknown_label",
                C::UnregisteredToken(_) => "unregistered_token",
                C::Config(_) => "config",
                C::InvalidInput(_) => "invalid_input",
                C::MissingAlignment(_) => "missing_alignment",
                C::NonFinite { .. } => "non_finite",
                C::IncompatibleSymbols(_) => "incompatible_symbols",
            },
            SpeechError::Io { .. } => "io",
            SpeechError::Parse { .. } => "parse",
            SpeechError::Format { .. } => "format",
            SpeechError::Audio { .. } => "audio",
            SpeechError::DuplicateUtterance { .. } => "duplicate_utterance",
            SpeechError::Fingerprint(_) => "fingerprint",
            SpeechError::Diverged { .. } => "diverged",
            SpeechError::Invalid(_) => "invalid",
        }
    }
}

pub type Result<T, E = SpeechError> = std::result::Result<T, E>;
