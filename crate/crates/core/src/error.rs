use std::path::PathBuf;

use thiserror::Error;

/// Process exit code for `main` when an [`Error`] reaches the top level.
///
/// Configuration problems exit with 2, missing or malformed data with 3, and
/// numerical failures with 4. Success is 0.
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Error)]
pub enum Error {
    /// An operation received an empty signal or spectrogram.
    #[error("empty input")]
    EmptyInput,

    /// A configuration value is out of range or inconsistent.
    #[error("bad config: {0}")]
    BadConfig(String),

    /// A spectrogram contains NaN or infinite values.
    #[error("non-finite spectrogram")]
    NonFiniteSpectrogram,

    /// A power map is identically zero, so no meaningful floor exists.
    #[error("silent spectrogram")]
    SilentSpectrogram,

    /// A power map contains a negative entry.
    #[error("negative power value")]
    NegativePower,

    /// The normal equations are singular and no diagonal loading was applied.
    #[error("rank-deficient normal equations")]
    RankDeficient,

    /// A regressor block is identically zero and no loading was applied.
    #[error("degenerate regressor")]
    DegenerateRegressor,

    /// A spatial covariance matrix could not be inverted without loading.
    #[error("singular covariance matrix")]
    SingularCovariance,

    /// The requested reference channel does not exist.
    #[error("reference channel {channel} out of range for {channels} channel(s)")]
    RefChannelOutOfRange { channel: usize, channels: usize },

    /// Two operands have incompatible dimensions.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A per-speaker collection has the wrong number of entries.
    #[error("speaker count mismatch: expected {expected}, got {got}")]
    SpeakerCountMismatch { expected: usize, got: usize },

    /// A finite perturbation level was requested for an all-zero target.
    #[error("cannot set estimate quality for a silent target")]
    SilentTarget,

    /// A metric reference signal has no energy.
    #[error("reference signal has no energy")]
    SilentReference,

    /// A stage failed while processing a specific scene.
    #[error("stage {stage} on scene {scene}: {source}")]
    Stage {
        stage: String,
        scene: String,
        #[source]
        source: Box<Error>,
    },

    /// Filesystem failure, annotated with the offending path.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// WAV encode or decode failure, annotated with the offending path.
    #[error("{path}: {message}")]
    Wav { path: PathBuf, message: String },

    /// Pipeline configuration text could not be parsed.
    #[error("config line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    /// Scene manifest text could not be parsed.
    #[error("manifest line {line}: {message}")]
    ManifestParse { line: usize, message: String },

    /// A manifest entry is incomplete or references missing data.
    #[error("manifest scene {id}: {message}")]
    ManifestScene { id: String, message: String },
}

impl Error {
    /// Classifies this error into one of the process exit codes.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::BadConfig(_) | Error::ConfigParse { .. } => EXIT_CONFIG,
            Error::EmptyInput
            | Error::RefChannelOutOfRange { .. }
            | Error::ShapeMismatch(_)
            | Error::SpeakerCountMismatch { .. }
            | Error::Io { .. }
            | Error::Wav { .. }
            | Error::ManifestParse { .. }
            | Error::ManifestScene { .. } => EXIT_DATA,
            Error::NonFiniteSpectrogram
            | Error::SilentSpectrogram
            | Error::NegativePower
            | Error::RankDeficient
            | Error::DegenerateRegressor
            | Error::SingularCovariance
            | Error::SilentTarget
            | Error::SilentReference => EXIT_NUMERICAL,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }

    /// Wraps an error with the stage and scene it occurred in.
    pub fn in_stage(self, stage: &str, scene: &str) -> Error {
        Error::Stage {
            stage: stage.to_string(),
            scene: scene.to_string(),
            source: Box::new(self),
        }
    }

    /// Tags an I/O failure with the path it concerned.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn wav(path: impl Into<PathBuf>, err: hound::Error) -> Error {
        Error::Wav {
            path: path.into(),
            message: err.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
