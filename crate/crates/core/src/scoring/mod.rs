//! Tile scoring: the scorer abstraction, a built-in heuristic scorer for
//! synthetic imagery, batch scoring, class activation maps and the file
//! protocol used to exchange tiles and scores with external models.

mod cam;
pub mod protocol;

use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{TileIndex, TILE_PIXELS};
use crate::par::Execution;

pub use cam::{bilinear_upsample, compute_cam, Cam, ClassifierWeights, FeatureMapTensor, CAM_SIZE};

/// Pixel count of one tile.
pub const TILE_AREA: usize = (TILE_PIXELS * TILE_PIXELS) as usize;

/// A 500×500 RGB tile, row-major, 8 bits per channel.
#[derive(Clone, PartialEq, Eq)]
pub struct TileImage {
    pixels: Vec<u8>,
}

impl std::fmt::Debug for TileImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TileImage").finish_non_exhaustive()
    }
}

impl TileImage {
    pub fn from_pixels(pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != TILE_AREA * 3 {
            return Err(Error::Dimension {
                expected: TILE_AREA * 3,
                actual: pixels.len(),
            });
        }
        Ok(TileImage { pixels })
    }

    pub fn filled(rgb: [u8; 3]) -> Self {
        TileImage {
            pixels: rgb.iter().copied().cycle().take(TILE_AREA * 3).collect(),
        }
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn from_rgb_image(img: RgbImage) -> Result<Self> {
        if img.width() != TILE_PIXELS || img.height() != TILE_PIXELS {
            return Err(Error::Malformed(format!(
                "tile image is {}x{}, expected {TILE_PIXELS}x{TILE_PIXELS}",
                img.width(),
                img.height()
            )));
        }
        Self::from_pixels(img.into_raw())
    }

    pub fn to_rgb_image(&self) -> RgbImage {
        RgbImage::from_raw(TILE_PIXELS, TILE_PIXELS, self.pixels.clone())
            .expect("buffer length checked at construction")
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let reader = image::ImageReader::open(path).map_err(|e| Error::io(path, e))?;
        let img = reader.with_guessed_format().map_err(|e| Error::io(path, e))?;
        Self::from_rgb_image(img.decode()?.into_rgb8())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb_image()
            .save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    /// Fraction of pixels whose luminance exceeds 200.
    pub fn bright_fraction(&self) -> f64 {
        let bright = self
            .pixels
            .chunks_exact(3)
            .filter(|px| is_bright(px[0], px[1], px[2]))
            .count();
        bright as f64 / TILE_AREA as f64
    }
}

/// Rec. 601 luma strictly above 200, in exact integer arithmetic.
#[inline]
pub fn is_bright(r: u8, g: u8, b: u8) -> bool {
    299 * u32::from(r) + 587 * u32::from(g) + 114 * u32::from(b) > 200_000
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileScore {
    pub tile: TileIndex,
    pub probability: f64,
}

/// Anything that turns a tile image into a facility probability.
///
/// Implementations are shared across worker threads.
pub trait TileScorer: Sync {
    fn score(&self, tile: TileIndex, image: &TileImage) -> Result<f64>;
}

/// Logistic response to the fraction of bright pixels.
///
/// Synthetic facilities render as clusters of bright tank discs on dark
/// terrain; `p = σ(k·(f − f₀))` with `k = 200`, `f₀ = 0.02`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeuristicScorer {
    pub gain: f64,
    pub midpoint: f64,
}

impl Default for HeuristicScorer {
    fn default() -> Self {
        HeuristicScorer {
            gain: 200.0,
            midpoint: 0.02,
        }
    }
}

impl HeuristicScorer {
    pub fn probability(&self, img: &TileImage) -> f64 {
        logistic(self.gain * (img.bright_fraction() - self.midpoint))
    }
}

impl TileScorer for HeuristicScorer {
    fn score(&self, _tile: TileIndex, image: &TileImage) -> Result<f64> {
        Ok(self.probability(image))
    }
}

pub fn heuristic_score(img: &TileImage) -> f64 {
    HeuristicScorer::default().probability(img)
}

pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Scores one tile, attributing failures and out-of-range outputs to it.
pub fn score_tile(scorer: &dyn TileScorer, tile: TileIndex, image: &TileImage) -> Result<TileScore> {
    let probability = scorer.score(tile, image).map_err(|e| Error::Scorer {
        tile,
        message: e.to_string(),
    })?;
    if !(0.0..=1.0).contains(&probability) {
        return Err(Error::Scorer {
            tile,
            message: format!("probability {probability} outside [0, 1]"),
        });
    }
    Ok(TileScore { tile, probability })
}

/// Scores every tile; output is sorted by `(row, col)`.
///
/// Any scorer failure aborts the batch. When several tiles fail, the error
/// names the smallest failing tile so the diagnostic is stable too.
pub fn score_batch(
    tiles: &[(TileIndex, TileImage)],
    scorer: &dyn TileScorer,
    exec: Execution,
) -> Result<Vec<TileScore>> {
    let results = exec.map(tiles, |(tile, image)| score_tile(scorer, *tile, image))?;
    collect_sorted(results)
}

pub(crate) fn collect_sorted(results: Vec<Result<TileScore>>) -> Result<Vec<TileScore>> {
    let mut scores = Vec::with_capacity(results.len());
    let mut first_err: Option<(TileIndex, Error)> = None;
    for r in results {
        match r {
            Ok(s) => scores.push(s),
            Err(e) => {
                let tile = match &e {
                    Error::Scorer { tile, .. } => *tile,
                    _ => TileIndex::new(i32::MAX, i32::MAX),
                };
                if first_err.as_ref().is_none_or(|(t, _)| tile < *t) {
                    first_err = Some((tile, e));
                }
            }
        }
    }
    if let Some((_, e)) = first_err {
        return Err(e);
    }
    scores.sort_by_key(|s| s.tile);
    Ok(scores)
}
