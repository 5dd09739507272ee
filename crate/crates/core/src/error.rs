use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the simulation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {what}: {message}")]
    Parse { what: String, message: String },

    #[error("mesh has no non-degenerate faces")]
    EmptyMesh,

    #[error("invalid material mapping: {0}")]
    InvalidMaterial(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no face exceeds the diffraction curvature threshold {threshold} 1/m")]
    NoCandidates { threshold: f64 },

    #[error("spectrum has {actual} bins, frequency grid expects {expected}")]
    GridMismatch { expected: usize, actual: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("filter bank has {bank} channels but {signal} signals were supplied")]
    ChannelMismatch { bank: usize, signal: usize },

    #[error("least-squares normal equations are singular; raise the regularization")]
    SingularSystem,

    #[error("invalid band: {0}")]
    InvalidBand(String),

    #[error("sample rate mismatch: {expected} Hz vs {actual} Hz")]
    RateMismatch { expected: f64, actual: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("config hash mismatch: outputs were produced by {found}, current config is {expected}")]
    HashMismatch { expected: String, found: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(what: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            what: what.into(),
            message: message.into(),
        }
    }
}

/// Attaches a pipeline stage label to an error.
pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
