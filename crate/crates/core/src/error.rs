use std::path::PathBuf;

use crate::geo::TileIndex;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A value outside the domain an operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("scorer failed on tile ({}, {}): {message}", tile.col, tile.row)]
    Scorer { tile: TileIndex, message: String },

    #[error("imagery missing for {} tile(s), first: {}", .0.len(), fmt_tiles(.0))]
    MissingTiles(Vec<TileIndex>),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("unknown detection id {0}")]
    UnknownDetection(u32),

    #[error("illegal review transition: {0}")]
    IllegalTransition(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    GeoJson(#[from] Box<geojson::Error>),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the error is a missing file rather than bad content.
    pub fn is_not_found(&self) -> bool {
        matches!(self, Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound)
    }
}

fn fmt_tiles(tiles: &[TileIndex]) -> String {
    tiles
        .iter()
        .take(5)
        .map(|t| format!("({},{})", t.col, t.row))
        .collect::<Vec<_>>()
        .join(" ")
}
