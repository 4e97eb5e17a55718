use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic {found:?} (expected \"RSTR0001\")")]
    BadMagic { found: Vec<u8> },

    #[error("invalid raster header: {0}")]
    InvalidHeader(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error(
        "header/payload size mismatch: header implies {expected} payload bytes, file holds {found}"
    )]
    SizeMismatch { expected: u64, found: u64 },

    #[error("window {window} out of bounds for {width}x{height} raster")]
    OutOfBounds {
        window: String,
        width: u64,
        height: u64,
    },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("label {label} at pixel ({x},{y}) is not a class of a {k}-class scheme")]
    InvalidLabel {
        label: u8,
        x: usize,
        y: usize,
        k: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid band layout: {0}")]
    BandLayout(String),

    #[error("band {band} has no valid samples")]
    AllNodata { band: String },

    #[error("invalid tile spec: {0}")]
    InvalidTileSpec(String),

    #[error("tile index {index} out of range ({count} tiles)")]
    TileIndex { index: usize, count: usize },

    #[error("invalid scene spec: {0}")]
    InvalidScene(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("channel mismatch: backend expects {expected} channels, got {found}")]
    ChannelMismatch { expected: usize, found: usize },

    #[error("backend failure on tile {tile}: {message}")]
    Backend { tile: u64, message: String },

    #[error("protocol error at frame {frame} (byte offset {offset}): {message}")]
    Protocol {
        frame: u64,
        offset: u64,
        message: String,
    },

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },

    #[error("training split is empty")]
    EmptyTrainingSplit,

    #[error("stitch: missing tile ({row},{col})")]
    MissingTile { row: usize, col: usize },

    #[error("stitch: duplicate tile ({row},{col})")]
    DuplicateTile { row: usize, col: usize },

    #[error("accuracy undefined: {0}")]
    EmptyMatrix(String),

    #[error("invalid model file: {0}")]
    Model(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("png encoding error: {0}")]
    Png(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse failure class, used by the command-line driver to pick an exit code.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } | Error::Png(_) => ErrorKind::Io,
            Error::Config(_) | Error::InvalidTileSpec(_) | Error::InvalidScene(_) => {
                ErrorKind::Config
            }
            Error::Backend { .. } | Error::Protocol { .. } | Error::ChannelMismatch { .. } => {
                ErrorKind::Backend
            }
            _ => ErrorKind::Validation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Io,
    Backend,
    Validation,
}
