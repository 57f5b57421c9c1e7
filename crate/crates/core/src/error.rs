use thiserror::Error;

use crate::tiling::WindowSpec;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A segmenter backend failed while processing the given window.
    #[error("segmenter failed at window {window}: {source}")]
    AtWindow {
        window: WindowSpec,
        #[source]
        source: Box<Error>,
    },

    /// An inpainter backend failed while processing the given tile.
    #[error("inpainter failed at tile {tile}: {source}")]
    AtTile {
        tile: WindowSpec,
        #[source]
        source: Box<Error>,
    },

    #[error("training failed: {0}")]
    Training(String),

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
