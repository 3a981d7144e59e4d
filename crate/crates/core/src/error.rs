use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("dataset manifest not found at {0}")]
    MissingManifest(PathBuf),

    #[error("video {video_id} has {found} frames, expected {expected}")]
    FrameCountMismatch {
        video_id: usize,
        expected: usize,
        found: usize,
    },

    #[error("bad flow raster {path}: {reason}")]
    FlowFormat { path: PathBuf, reason: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("box does not cover any pixel of the {width}x{height} raster")]
    BoxOutsideRaster { width: u32, height: u32 },

    #[error("trajectory has {0} points, expected 15")]
    TrajectoryLength(usize),

    #[error("duplicate detection for video {video_id}, frame {frame}")]
    DuplicateDetection { video_id: usize, frame: usize },

    #[error("no detection for video {video_id}, frame {frame}")]
    MissingDetection { video_id: usize, frame: usize },

    #[error("detection for video {video_id}, frame {frame} lies outside the ground truth")]
    UnexpectedDetection { video_id: usize, frame: usize },

    #[error("window length {window} exceeds stream length {total}")]
    WindowTooLong { window: usize, total: usize },

    #[error("invalid window parameters: {0}")]
    InvalidWindow(String),

    #[error("frame {frame} of video {video_id} is not covered by any window")]
    UncoveredFrame { video_id: usize, frame: usize },

    #[error("invalid crf problem: {0}")]
    InvalidProblem(String),

    #[error("non-finite cost on edge {edge}")]
    NonFiniteCost { edge: usize },

    #[error("state space of {0} labelings is too large for exhaustive search")]
    StateSpaceTooLarge(u128),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid scene: {0}")]
    Scene(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end: 2 for I/O failures,
    /// 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::MissingManifest(_) => 2,
            _ => 1,
        }
    }
}
