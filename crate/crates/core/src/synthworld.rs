//! Seeded synthetic worlds: dark noisy terrain with planted facilities drawn
//! as clusters of bright storage-tank discs, plus the exact ground truth.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{
    enumerate_tiles, project, tile_of_projected, unproject, BoundingRegion, GeoPoint, ProjectedPoint,
    TileIndex, TILE_PIXELS, TILE_SIDE_M,
};
use crate::io_util::{read_json, write_json};
use crate::par::Execution;
use crate::pipeline::{DirectorySource, TileSource};
use crate::scoring::{protocol, TileImage, TILE_AREA};

pub const WORLD_FILE: &str = "world.json";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const TILES_DIR: &str = "tiles";

/// Minimum Chebyshev distance between facility centers, in projected meters.
pub const MIN_SEPARATION_M: f64 = 4.0 * TILE_SIDE_M;
pub const TANK_RADIUS_PX: i32 = 8;
/// Bright-pixel fraction every facility tile reaches.
pub const MIN_FACILITY_COVERAGE: f64 = 0.03;

const TERRAIN_BASE: [u8; 3] = [40, 60, 35];
const TERRAIN_NOISE_MAX: f64 = 40.0;
const CELL_PX: i32 = 25;
const CELLS_PER_SIDE: i32 = TILE_PIXELS as i32 / CELL_PX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedFacility {
    pub center: GeoPoint,
    pub tank_count: u32,
    /// Number of tiles the facility spans, 1 to 4.
    pub footprint_tiles: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorldSpec {
    pub region: BoundingRegion,
    pub seed: u64,
    pub facilities: Vec<PlantedFacility>,
    /// Terrain noise amplitude in `[0, 1]`.
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFacility {
    pub center: GeoPoint,
    pub tank_count: u32,
    /// Footprint tiles inside the region, sorted by `(row, col)`.
    pub tiles: Vec<TileIndex>,
}

impl SyntheticWorldSpec {
    /// Places `count` facilities uniformly at random, at least two tiles
    /// from the region edge and [`MIN_SEPARATION_M`] apart.
    pub fn generate(region: BoundingRegion, seed: u64, count: usize, noise: f64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi) = region.projected_bounds()?;
        let margin = 2.0 * TILE_SIDE_M;
        if hi.x - lo.x <= 2.0 * margin || hi.y - lo.y <= 2.0 * margin {
            return Err(Error::Domain("region too small to place facilities".into()));
        }
        let mut centers: Vec<ProjectedPoint> = Vec::with_capacity(count);
        let mut facilities = Vec::with_capacity(count);
        let mut attempts = 0usize;
        while facilities.len() < count {
            attempts += 1;
            if attempts > 10_000 * count.max(1) {
                return Err(Error::Domain(format!(
                    "could not place {count} separated facilities in region {region}"
                )));
            }
            let q = ProjectedPoint::new(
                rng.random_range(lo.x + margin..hi.x - margin),
                rng.random_range(lo.y + margin..hi.y - margin),
            );
            if centers.iter().any(|c| chebyshev(*c, q) < MIN_SEPARATION_M) {
                continue;
            }
            let center = unproject(q)?;
            if !region.contains(center) {
                continue;
            }
            centers.push(q);
            facilities.push(PlantedFacility {
                center,
                tank_count: rng.random_range(5..=60),
                footprint_tiles: rng.random_range(1..=4),
            });
        }
        let spec = SyntheticWorldSpec {
            region,
            seed,
            facilities,
            noise,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::Domain(format!("noise {} outside [0, 1]", self.noise)));
        }
        let mut centers = Vec::with_capacity(self.facilities.len());
        for (i, f) in self.facilities.iter().enumerate() {
            if !self.region.contains(f.center) {
                return Err(Error::Domain(format!("facility {i} lies outside the region")));
            }
            if f.tank_count == 0 || !(1..=4).contains(&f.footprint_tiles) {
                return Err(Error::Domain(format!(
                    "facility {i}: tank_count must be positive and footprint_tiles in 1..=4"
                )));
            }
            centers.push(project(f.center)?);
        }
        for (i, a) in centers.iter().enumerate() {
            for (j, b) in centers.iter().enumerate().skip(i + 1) {
                if chebyshev(*a, *b) < MIN_SEPARATION_M {
                    return Err(Error::Domain(format!(
                        "facilities {i} and {j} are closer than four tile sides"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let spec: SyntheticWorldSpec = read_json(path)?;
        spec.validate()?;
        Ok(spec)
    }
}

fn chebyshev(a: ProjectedPoint, b: ProjectedPoint) -> f64 {
    (a.x - b.x).abs().max((a.y - b.y).abs())
}

/// Tiles a facility covers. Extra tiles extend toward the quadrant of the
/// center tile that holds the facility center, so the footprint's mean tile
/// center stays within half a tile of the planted center on each axis.
pub fn footprint(facility: &PlantedFacility) -> Result<Vec<TileIndex>> {
    let q = project(facility.center)?;
    let t = tile_of_projected(q);
    let fx = q.x / TILE_SIDE_M - f64::from(t.col);
    let fy = q.y / TILE_SIDE_M - f64::from(t.row);
    let dx = if fx >= 0.5 { 1 } else { -1 };
    let dy = if fy >= 0.5 { 1 } else { -1 };
    let mut tiles = vec![t];
    if facility.footprint_tiles >= 2 {
        tiles.push(TileIndex::new(t.col + dx, t.row));
    }
    if facility.footprint_tiles >= 3 {
        tiles.push(TileIndex::new(t.col, t.row + dy));
    }
    if facility.footprint_tiles >= 4 {
        tiles.push(TileIndex::new(t.col + dx, t.row + dy));
    }
    tiles.sort_unstable();
    Ok(tiles)
}

/// A spec prepared for rendering.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    spec: SyntheticWorldSpec,
    owner: HashMap<TileIndex, usize>,
    lo: TileIndex,
    hi: TileIndex,
}

impl SyntheticWorld {
    pub fn new(spec: SyntheticWorldSpec) -> Result<Self> {
        spec.validate()?;
        let (lo, hi) = spec.region.projected_bounds()?;
        let mut owner = HashMap::new();
        for (i, f) in spec.facilities.iter().enumerate() {
            for t in footprint(f)? {
                owner.insert(t, i);
            }
        }
        Ok(SyntheticWorld {
            spec,
            owner,
            lo: tile_of_projected(lo),
            hi: tile_of_projected(hi),
        })
    }

    pub fn spec(&self) -> &SyntheticWorldSpec {
        &self.spec
    }

    pub fn contains_tile(&self, t: TileIndex) -> bool {
        (self.lo.col..=self.hi.col).contains(&t.col) && (self.lo.row..=self.hi.row).contains(&t.row)
    }

    pub fn tiles(&self) -> Result<Vec<TileIndex>> {
        enumerate_tiles(&self.spec.region)
    }

    pub fn render_tile(&self, t: TileIndex) -> Result<TileImage> {
        if !self.contains_tile(t) {
            return Err(Error::Domain(format!(
                "tile ({}, {}) lies outside the world region",
                t.col, t.row
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(tile_seed(self.spec.seed, t));
        let mut noise = vec![0u8; TILE_AREA];
        rng.fill_bytes(&mut noise);
        let lut: Vec<u8> = (0..=255u32)
            .map(|n| (f64::from(n) / 255.0 * TERRAIN_NOISE_MAX * self.spec.noise) as u8)
            .collect();

        let mut pixels = vec![0u8; TILE_AREA * 3];
        for (px, &n) in pixels.chunks_exact_mut(3).zip(&noise) {
            let add = lut[n as usize];
            px[0] = TERRAIN_BASE[0] + add;
            px[1] = TERRAIN_BASE[1] + add;
            px[2] = TERRAIN_BASE[2] + add;
        }

        if let Some(&i) = self.owner.get(&t) {
            draw_tanks(&mut pixels, self.spec.facilities[i].tank_count, &mut rng);
        }
        TileImage::from_pixels(pixels)
    }

    pub fn ground_truth(&self) -> Result<Vec<GroundTruthFacility>> {
        self.spec
            .facilities
            .iter()
            .map(|f| {
                Ok(GroundTruthFacility {
                    center: f.center,
                    tank_count: f.tank_count,
                    tiles: footprint(f)?
                        .into_iter()
                        .filter(|t| self.contains_tile(*t))
                        .collect(),
                })
            })
            .collect()
    }
}

impl TileSource for SyntheticWorld {
    fn contains(&self, tile: TileIndex) -> bool {
        self.contains_tile(tile)
    }

    fn fetch(&self, tile: TileIndex) -> Result<TileImage> {
        self.render_tile(tile)
    }
}

/// Imagery for a directory: a world directory serves its rendered `tiles/`
/// when present and renders on the fly otherwise; any other directory is
/// read as `{col}_{row}.png` tiles.
pub fn open_tile_source(dir: &Path) -> Result<Box<dyn TileSource + Send>> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "tile directory not found"),
        ));
    }
    let world_file = dir.join(WORLD_FILE);
    if !world_file.is_file() {
        return Ok(Box::new(DirectorySource::new(dir)));
    }
    let tiles = dir.join(TILES_DIR);
    if tiles.is_dir() {
        Ok(Box::new(DirectorySource::new(tiles)))
    } else {
        Ok(Box::new(SyntheticWorld::new(SyntheticWorldSpec::load(&world_file)?)?))
    }
}

pub fn ground_truth(spec: &SyntheticWorldSpec) -> Result<Vec<GroundTruthFacility>> {
    SyntheticWorld::new(spec.clone())?.ground_truth()
}

fn tile_seed(seed: u64, t: TileIndex) -> u64 {
    // splitmix64 finalizer over the packed tile address
    let packed = (u64::from(t.col as u32) << 32) | u64::from(t.row as u32);
    let mut z = seed ^ packed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn disc_offsets() -> Vec<(i32, i32)> {
    let r = TANK_RADIUS_PX;
    (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
        .collect()
}

/// Discs needed so a tile reaches [`MIN_FACILITY_COVERAGE`].
pub fn min_tank_discs() -> usize {
    let need = MIN_FACILITY_COVERAGE * TILE_AREA as f64;
    (need / disc_offsets().len() as f64).ceil() as usize
}

/// Draws `tank_count` discs, topped up to the minimum coverage, one per
/// 25 px grid cell so discs never overlap.
fn draw_tanks(pixels: &mut [u8], tank_count: u32, rng: &mut ChaCha8Rng) {
    let offsets = disc_offsets();
    let max_discs = (CELLS_PER_SIDE * CELLS_PER_SIDE) as usize;
    let discs = (tank_count as usize).max(min_tank_discs()).min(max_discs);
    let mut cells: Vec<i32> = (0..CELLS_PER_SIDE * CELLS_PER_SIDE).collect();
    cells.shuffle(rng);
    let side = TILE_PIXELS as i32;
    for &cell in &cells[..discs] {
        let cx = (cell % CELLS_PER_SIDE) * CELL_PX + CELL_PX / 2 + rng.random_range(-3..=3);
        let cy = (cell / CELLS_PER_SIDE) * CELL_PX + CELL_PX / 2 + rng.random_range(-3..=3);
        for &(dx, dy) in &offsets {
            let (x, y) = (cx + dx, cy + dy);
            if (0..side).contains(&x) && (0..side).contains(&y) {
                let i = ((y * side + x) * 3) as usize;
                pixels[i..i + 3].copy_from_slice(&[255, 255, 255]);
            }
        }
    }
}

/// Writes `world.json`, `ground_truth.json` and, when `with_tiles` is set,
/// every rendered tile plus its manifest under `tiles/`.
pub fn write_world(dir: &Path, world: &SyntheticWorld, with_tiles: bool, exec: Execution) -> Result<()> {
    write_json(&dir.join(WORLD_FILE), world.spec())?;
    write_json(&dir.join(GROUND_TRUTH_FILE), &world.ground_truth()?)?;
    if !with_tiles {
        return Ok(());
    }
    let tiles_dir = dir.join(TILES_DIR);
    std::fs::create_dir_all(&tiles_dir).map_err(|e| Error::io(&tiles_dir, e))?;
    let tiles = world.tiles()?;
    let entries = exec.try_map(&tiles, |&t| {
        let filename = protocol::tile_png_name(t);
        world.render_tile(t)?.save_png(&tiles_dir.join(&filename))?;
        Ok(protocol::ManifestEntry {
            col: t.col,
            row: t.row,
            filename,
        })
    })?;
    protocol::write_manifest(&tiles_dir, &entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::tile_centroid;
    use crate::scoring::heuristic_score;

    fn region() -> BoundingRegion {
        BoundingRegion::new(34.0, -100.0, 34.2, -99.8).unwrap()
    }

    fn world(count: usize, seed: u64) -> SyntheticWorld {
        SyntheticWorld::new(SyntheticWorldSpec::generate(region(), seed, count, 0.8).unwrap()).unwrap()
    }

    #[test]
    fn disc_geometry() {
        assert_eq!(disc_offsets().len(), 197);
        assert_eq!(min_tank_discs(), 39);
    }

    #[test]
    fn terrain_stays_dark() {
        let w = world(0, 1);
        let img = w.render_tile(w.tiles().unwrap()[17]).unwrap();
        let max_luma = img
            .pixels()
            .chunks_exact(3)
            .map(|p| (299 * p[0] as u32 + 587 * p[1] as u32 + 114 * p[2] as u32) / 1000)
            .max()
            .unwrap();
        assert!(max_luma < 100);
        assert_eq!(img.bright_fraction(), 0.0);
        assert!(heuristic_score(&img) < 0.02);
    }

    #[test]
    fn facility_tiles_are_bright() {
        let w = world(3, 9);
        for gt in w.ground_truth().unwrap() {
            for &t in &gt.tiles {
                let img = w.render_tile(t).unwrap();
                assert!(img.bright_fraction() >= MIN_FACILITY_COVERAGE);
                assert!(heuristic_score(&img) > 0.88);
            }
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let w = world(2, 5);
        let t = w.ground_truth().unwrap()[0].tiles[0];
        assert_eq!(w.render_tile(t).unwrap(), w.render_tile(t).unwrap());
        let other = world(2, 6);
        assert_ne!(
            w.render_tile(w.tiles().unwrap()[0]).unwrap(),
            other.render_tile(w.tiles().unwrap()[0]).unwrap()
        );
    }

    #[test]
    fn outside_tiles_are_rejected() {
        let w = world(0, 1);
        assert!(w.render_tile(TileIndex::new(0, 0)).is_err());
    }

    #[test]
    fn footprints() {
        let c = tile_centroid(TileIndex::new(-8000, 3300));
        let q = project(c).unwrap();
        // nudge into the upper-right quadrant of the tile
        let center = unproject(ProjectedPoint::new(q.x + 100.0, q.y + 100.0)).unwrap();
        let mut f = PlantedFacility { center, tank_count: 10, footprint_tiles: 1 };
        assert_eq!(footprint(&f).unwrap(), vec![TileIndex::new(-8000, 3300)]);
        f.footprint_tiles = 4;
        assert_eq!(
            footprint(&f).unwrap(),
            vec![
                TileIndex::new(-8000, 3300),
                TileIndex::new(-7999, 3300),
                TileIndex::new(-8000, 3301),
                TileIndex::new(-7999, 3301),
            ]
        );
        let gt = ground_truth(&SyntheticWorldSpec {
            region: BoundingRegion::new(c.lat() - 0.1, c.lon() - 0.1, c.lat() + 0.1, c.lon() + 0.1).unwrap(),
            seed: 0,
            facilities: vec![f],
            noise: 0.5,
        })
        .unwrap();
        assert_eq!(gt.len(), 1);
        assert_eq!(gt[0].tiles.len(), 4);
    }

    #[test]
    fn spec_validation() {
        let mut spec = SyntheticWorldSpec::generate(region(), 3, 4, 0.5).unwrap();
        assert_eq!(spec.facilities.len(), 4);
        spec.facilities[1].center = spec.facilities[0].center;
        assert!(spec.validate().is_err());
        let mut spec = SyntheticWorldSpec::generate(region(), 3, 1, 0.5).unwrap();
        spec.noise = 2.0;
        assert!(spec.validate().is_err());
        assert!(SyntheticWorldSpec::generate(region(), 3, 500, 0.5).is_err());
    }

    #[test]
    fn world_files() {
        let dir = tempfile::tempdir().unwrap();
        let small = BoundingRegion::new(34.0, -100.0, 34.05, -99.95).unwrap();
        let w = SyntheticWorld::new(SyntheticWorldSpec::generate(small, 11, 1, 0.3).unwrap()).unwrap();
        write_world(dir.path(), &w, true, Execution::default()).unwrap();
        assert_eq!(SyntheticWorldSpec::load(&dir.path().join(WORLD_FILE)).unwrap(), *w.spec());
        let manifest = protocol::read_manifest(&dir.path().join(TILES_DIR)).unwrap();
        assert_eq!(manifest.len(), w.tiles().unwrap().len());
        let t = manifest[3].tile();
        let img = TileImage::load_png(&dir.path().join(TILES_DIR).join(&manifest[3].filename)).unwrap();
        assert_eq!(img, w.render_tile(t).unwrap());
        assert_eq!(open_tile_source(dir.path()).unwrap().fetch(t).unwrap(), img);

        let bare = tempfile::tempdir().unwrap();
        write_world(bare.path(), &w, false, Execution::default()).unwrap();
        assert!(!bare.path().join(TILES_DIR).exists());
        let rendered = open_tile_source(bare.path()).unwrap();
        assert!(rendered.contains(t));
        assert_eq!(rendered.fetch(t).unwrap(), img);
        assert!(open_tile_source(&bare.path().join("nope")).err().unwrap().is_not_found());
    }
}
