//! Geodesy, spherical Web Mercator projection and the fixed tile grid.
//!
//! Tiles are 500 px at 2.5 m/px, i.e. 1250 m squares in projected meters.
//! Tile `(col, row)` owns the half-open footprint
//! `[col·1250, (col+1)·1250) × [row·1250, (row+1)·1250)`, so every projected
//! point belongs to exactly one tile.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sphere radius used by the projection, in meters.
pub const MERCATOR_RADIUS_M: f64 = 6_378_137.0;
/// Mean earth radius used for great-circle distances, in kilometers.
pub const EARTH_RADIUS_KM: f64 = 6371.0;
/// Latitude band outside of which the projection is rejected.
pub const MAX_MERCATOR_LAT: f64 = 85.06;

pub const TILE_PIXELS: u32 = 500;
pub const PIXEL_SIZE_M: f64 = 2.5;
/// Tile side in projected meters.
pub const TILE_SIDE_M: f64 = TILE_PIXELS as f64 * PIXEL_SIZE_M;

/// A validated geodetic coordinate in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoint")]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

#[derive(Deserialize)]
struct RawPoint {
    lat: f64,
    lon: f64,
}

impl TryFrom<RawPoint> for GeoPoint {
    type Error = Error;

    fn try_from(raw: RawPoint) -> Result<Self> {
        GeoPoint::new(raw.lat, raw.lon)
    }
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            // NaN fails both range checks
            return Err(Error::Domain(format!(
                "coordinate out of range: lat={lat}, lon={lon}"
            )));
        }
        Ok(GeoPoint { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

impl fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.6}, {:.6})", self.lat, self.lon)
    }
}

/// Web Mercator coordinates in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub x: f64,
    pub y: f64,
}

impl ProjectedPoint {
    pub fn new(x: f64, y: f64) -> Self {
        ProjectedPoint { x, y }
    }
}

/// Integer address of a tile in the global grid.
///
/// Ordered by `(row, col)`, which is the canonical output order of every
/// stage of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TileIndex {
    pub col: i32,
    pub row: i32,
}

impl TileIndex {
    pub const fn new(col: i32, row: i32) -> Self {
        TileIndex { col, row }
    }

    /// File stem shared by the image directory and scorer exchange layout.
    pub fn file_stem(&self) -> String {
        format!("{}_{}", self.col, self.row)
    }

    pub fn parse_stem(stem: &str) -> Option<TileIndex> {
        let (col, row) = stem.split_once('_')?;
        Some(TileIndex::new(col.parse().ok()?, row.parse().ok()?))
    }

    pub fn projected_center(&self) -> ProjectedPoint {
        ProjectedPoint::new(
            (f64::from(self.col) + 0.5) * TILE_SIDE_M,
            (f64::from(self.row) + 0.5) * TILE_SIDE_M,
        )
    }

    /// `(min_x, min_y, max_x, max_y)`; the max edges are exclusive.
    pub fn footprint(&self) -> (f64, f64, f64, f64) {
        let x0 = f64::from(self.col) * TILE_SIDE_M;
        let y0 = f64::from(self.row) * TILE_SIDE_M;
        (x0, y0, x0 + TILE_SIDE_M, y0 + TILE_SIDE_M)
    }
}

impl Ord for TileIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.row, self.col).cmp(&(other.row, other.col))
    }
}

impl PartialOrd for TileIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// An axis-aligned lat/lon box with inclusive edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRegion")]
pub struct BoundingRegion {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

#[derive(Deserialize)]
struct RawRegion {
    min_lat: f64,
    min_lon: f64,
    max_lat: f64,
    max_lon: f64,
}

impl TryFrom<RawRegion> for BoundingRegion {
    type Error = Error;

    fn try_from(r: RawRegion) -> Result<Self> {
        BoundingRegion::new(r.min_lat, r.min_lon, r.max_lat, r.max_lon)
    }
}

impl BoundingRegion {
    pub fn new(min_lat: f64, min_lon: f64, max_lat: f64, max_lon: f64) -> Result<Self> {
        GeoPoint::new(min_lat, min_lon)?;
        GeoPoint::new(max_lat, max_lon)?;
        if !(min_lat < max_lat && min_lon < max_lon) {
            return Err(Error::Domain(format!(
                "region needs min < max on both axes: lat {min_lat}..{max_lat}, lon {min_lon}..{max_lon}"
            )));
        }
        Ok(BoundingRegion {
            min_lat,
            min_lon,
            max_lat,
            max_lon,
        })
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        (self.min_lat..=self.max_lat).contains(&p.lat())
            && (self.min_lon..=self.max_lon).contains(&p.lon())
    }

    /// Projected `(min, max)` corners.
    pub fn projected_bounds(&self) -> Result<(ProjectedPoint, ProjectedPoint)> {
        let sw = project(GeoPoint::new(self.min_lat, self.min_lon)?)?;
        let ne = project(GeoPoint::new(self.max_lat, self.max_lon)?)?;
        Ok((sw, ne))
    }
}

/// Parses `min_lat,min_lon,max_lat,max_lon`.
impl FromStr for BoundingRegion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts = s
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Malformed(format!("region {s:?}: {e}")))?;
        match parts[..] {
            [a, b, c, d] => BoundingRegion::new(a, b, c, d),
            _ => Err(Error::Malformed(format!(
                "region {s:?}: expected min_lat,min_lon,max_lat,max_lon"
            ))),
        }
    }
}

impl fmt::Display for BoundingRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{}",
            self.min_lat, self.min_lon, self.max_lat, self.max_lon
        )
    }
}

pub fn project(p: GeoPoint) -> Result<ProjectedPoint> {
    if p.lat().abs() >= MAX_MERCATOR_LAT {
        return Err(Error::Domain(format!(
            "latitude {} outside the Mercator band (|lat| < {MAX_MERCATOR_LAT})",
            p.lat()
        )));
    }
    let lambda = p.lon().to_radians();
    let phi = p.lat().to_radians();
    Ok(ProjectedPoint {
        x: MERCATOR_RADIUS_M * lambda,
        y: MERCATOR_RADIUS_M * phi.tan().asinh(),
    })
}

/// Inverse of [`project`]. Longitudes past the antimeridian are wrapped.
pub fn unproject(q: ProjectedPoint) -> Result<GeoPoint> {
    if !q.x.is_finite() || !q.y.is_finite() {
        return Err(Error::Domain(format!(
            "non-finite projected point ({}, {})",
            q.x, q.y
        )));
    }
    let mut lon = (q.x / MERCATOR_RADIUS_M).to_degrees();
    if lon.abs() > 180.0 + 1e-9 {
        lon = (lon + 180.0).rem_euclid(360.0) - 180.0;
    }
    lon = lon.clamp(-180.0, 180.0);
    let lat = (q.y / MERCATOR_RADIUS_M).sinh().atan().to_degrees();
    GeoPoint::new(lat, lon)
}

/// Great-circle distance in kilometers.
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (phi1, phi2) = (a.lat().to_radians(), b.lat().to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon() - a.lon()).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

pub fn tile_of(p: GeoPoint) -> Result<TileIndex> {
    Ok(tile_of_projected(project(p)?))
}

pub fn tile_of_projected(q: ProjectedPoint) -> TileIndex {
    TileIndex::new(
        (q.x / TILE_SIDE_M).floor() as i32,
        (q.y / TILE_SIDE_M).floor() as i32,
    )
}

pub fn tile_centroid(t: TileIndex) -> GeoPoint {
    unproject(t.projected_center()).expect("tile centers are finite")
}

/// Tiles whose footprint intersects the projected region, sorted by `(row, col)`.
pub fn enumerate_tiles(region: &BoundingRegion) -> Result<Vec<TileIndex>> {
    let (sw, ne) = region.projected_bounds()?;
    let lo = tile_of_projected(sw);
    let hi = tile_of_projected(ne);
    let mut tiles =
        Vec::with_capacity(((hi.col - lo.col + 1) as usize) * ((hi.row - lo.row + 1) as usize));
    for row in lo.row..=hi.row {
        for col in lo.col..=hi.col {
            tiles.push(TileIndex::new(col, row));
        }
    }
    Ok(tiles)
}
