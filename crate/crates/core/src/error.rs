use std::path::PathBuf;

/// Errors raised by the restoration pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("format error in {field}: {reason}")]
    Format { field: &'static str, reason: String },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape {
        expected: (usize, usize, usize),
        actual: (usize, usize, usize),
    },

    #[error("invalid configuration `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("non-finite intermediate at diffusion step {step}")]
    Numeric { step: usize },

    #[error("operation not supported: {0}")]
    Capability(String),

    #[error("degenerate sample: variance {variance:e} below threshold")]
    DegenerateSample { variance: f64 },

    #[error("sample too small: {given} values, at least {needed} required")]
    SampleTooSmall { given: usize, needed: usize },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// The innermost error, looking through stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn format(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
