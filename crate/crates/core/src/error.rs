use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("duplicate utterance ({subject}, {index}) in manifest")]
    DuplicateUtterance { subject: String, index: usize },

    #[error("bad sample rate: {0} Hz")]
    BadSampleRate(u32),

    #[error("no subject has at least {0} utterances")]
    NoEligibleSubjects(usize),

    #[error("unsupported WAV encoding in {}: {reason}", path.display())]
    UnsupportedWav { path: PathBuf, reason: String },

    #[error("clip too short: {samples} samples, need at least {needed}")]
    ClipTooShort { samples: usize, needed: usize },

    #[error("feature matrix is empty")]
    EmptyFeatureMatrix,

    #[error("too few frames: {frames} frames for {components} components")]
    TooFewFrames { frames: usize, components: usize },

    #[error("component {0} collapsed and could not be reset")]
    DegenerateComponent(usize),

    #[error("need at least 2 subjects to train, got {0}")]
    TooFewSubjects(usize),

    #[error("development set is empty")]
    EmptyDevelopmentSet,

    #[error("empty input")]
    EmptyInput,

    #[error("cannot L2-normalize a zero vector")]
    NormalizationDegenerate,

    #[error("embedding is not unit-norm (norm = {0})")]
    NonUnitInput(f64),

    #[error("registry is empty")]
    EmptyRegistry,

    #[error("unknown subject: {0}")]
    UnknownSubject(String),

    #[error("score list is empty")]
    EmptyScores,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{}: {source}", path.display())]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// Attaches the file being processed, unless the error already names one.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        match self {
            e @ (Error::MissingFile(_)
            | Error::UnsupportedWav { .. }
            | Error::Io { .. }
            | Error::InFile { .. }) => e,
            other => Error::InFile {
                path: path.into(),
                source: Box::new(other),
            },
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }
}
