//! Deployment: enumerate tiles, score, threshold, merge positive tiles into
//! detections and drop detections that fall inside exclusion zones.

pub mod export;

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{enumerate_tiles, unproject, BoundingRegion, GeoPoint, ProjectedPoint, TileIndex};
use crate::par::Execution;
use crate::scoring::{collect_sorted, protocol, score_tile, TileImage, TileScore, TileScorer};

/// Probability threshold; a tile is positive when `probability >= threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct OperatingPoint(f64);

impl OperatingPoint {
    pub fn new(threshold: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::Domain(format!("threshold {threshold} outside [0, 1]")));
        }
        Ok(OperatingPoint(threshold))
    }

    pub fn threshold(&self) -> f64 {
        self.0
    }

    pub fn is_positive(&self, probability: f64) -> bool {
        probability >= self.0
    }
}

impl TryFrom<f64> for OperatingPoint {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        OperatingPoint::new(v)
    }
}

impl From<OperatingPoint> for f64 {
    fn from(op: OperatingPoint) -> f64 {
        op.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Adjacency {
    /// Edge-sharing neighbours only.
    #[default]
    #[serde(rename = "4")]
    Four,
    /// Edge- or corner-sharing neighbours.
    #[serde(rename = "8")]
    Eight,
}

impl Adjacency {
    pub fn offsets(&self) -> &'static [(i32, i32)] {
        const FOUR: [(i32, i32); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];
        const EIGHT: [(i32, i32); 8] = [
            (-1, -1),
            (0, -1),
            (1, -1),
            (-1, 0),
            (1, 0),
            (-1, 1),
            (0, 1),
            (1, 1),
        ];
        match self {
            Adjacency::Four => &FOUR,
            Adjacency::Eight => &EIGHT,
        }
    }
}

impl FromStr for Adjacency {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "4" => Ok(Adjacency::Four),
            "8" => Ok(Adjacency::Eight),
            _ => Err(Error::Malformed(format!("adjacency must be 4 or 8, got {s:?}"))),
        }
    }
}

impl fmt::Display for Adjacency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Adjacency::Four => "4",
            Adjacency::Eight => "8",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DetectionId(pub u32);

impl fmt::Display for DetectionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A connected group of positive tiles reduced to one location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub id: DetectionId,
    /// Sorted by `(row, col)`.
    pub member_tiles: Vec<TileIndex>,
    pub centroid: GeoPoint,
    pub max_probability: f64,
    pub mean_probability: f64,
    /// Member tile with the highest probability (first in tile order on ties).
    pub peak_tile: TileIndex,
}

impl Detection {
    pub fn tile_count(&self) -> usize {
        self.member_tiles.len()
    }

    /// Checks the structural invariants a merged detection must satisfy.
    pub fn validate(&self, adjacency: Adjacency) -> Result<()> {
        let bad = |msg: &str| Err(Error::Malformed(format!("detection {}: {msg}", self.id)));
        if self.member_tiles.is_empty() {
            return bad("no member tiles");
        }
        if self.member_tiles.windows(2).any(|w| w[0] >= w[1]) {
            return bad("member tiles not strictly sorted");
        }
        if !self.member_tiles.contains(&self.peak_tile) {
            return bad("peak tile is not a member");
        }
        let probs_ok = (0.0..=1.0).contains(&self.max_probability)
            && (0.0..=1.0).contains(&self.mean_probability)
            && self.max_probability >= self.mean_probability;
        if !probs_ok {
            return bad("probabilities out of range or max < mean");
        }
        if !is_connected(&self.member_tiles, adjacency) {
            return bad("member tiles are not connected");
        }
        Ok(())
    }
}

pub fn is_connected(tiles: &[TileIndex], adjacency: Adjacency) -> bool {
    let Some(&start) = tiles.first() else {
        return false;
    };
    let set: HashSet<TileIndex> = tiles.iter().copied().collect();
    let mut seen = HashSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(t) = queue.pop_front() {
        for &(dc, dr) in adjacency.offsets() {
            let n = TileIndex::new(t.col + dc, t.row + dr);
            if set.contains(&n) && seen.insert(n) {
                queue.push_back(n);
            }
        }
    }
    seen.len() == set.len()
}

/// A lat/lon box whose detections are discarded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionZone {
    pub region: BoundingRegion,
    #[serde(default)]
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionSummary {
    pub region: BoundingRegion,
    pub reason: String,
    pub removed: usize,
}

/// The positive tiles, i.e. those with `probability >= threshold`, in input order.
pub fn apply_threshold(scores: &[TileScore], op: OperatingPoint) -> Vec<TileScore> {
    scores
        .iter()
        .filter(|s| op.is_positive(s.probability))
        .copied()
        .collect()
}

/// Merges positive tiles into connected components.
///
/// Each component becomes one [`Detection`] whose centroid is the mean of
/// its member tiles' projected centers. Detections are ordered by their
/// smallest member tile and numbered from 1 in that order. A tile listed
/// twice keeps its last score.
pub fn merge_positive_tiles(positive: &[TileScore], adjacency: Adjacency) -> Vec<Detection> {
    let probs: BTreeMap<TileIndex, f64> = positive.iter().map(|s| (s.tile, s.probability)).collect();
    let mut assigned: HashSet<TileIndex> = HashSet::with_capacity(probs.len());
    let mut detections = Vec::new();

    for &seed in probs.keys() {
        if !assigned.insert(seed) {
            continue;
        }
        let mut members = vec![seed];
        let mut queue = VecDeque::from([seed]);
        while let Some(t) = queue.pop_front() {
            for &(dc, dr) in adjacency.offsets() {
                let n = TileIndex::new(t.col + dc, t.row + dr);
                if probs.contains_key(&n) && assigned.insert(n) {
                    members.push(n);
                    queue.push_back(n);
                }
            }
        }
        members.sort_unstable();
        let id = DetectionId(detections.len() as u32 + 1);
        detections.push(summarize(id, members, &probs));
    }
    detections
}

fn summarize(id: DetectionId, members: Vec<TileIndex>, probs: &BTreeMap<TileIndex, f64>) -> Detection {
    let n = members.len() as f64;
    let (mut sx, mut sy, mut sum_p) = (0.0, 0.0, 0.0);
    let mut peak = (members[0], f64::NEG_INFINITY);
    let mut min_p = f64::INFINITY;
    for &t in &members {
        let c = t.projected_center();
        sx += c.x;
        sy += c.y;
        let p = probs[&t];
        sum_p += p;
        min_p = min_p.min(p);
        if p > peak.1 {
            peak = (t, p);
        }
    }
    let centroid = unproject(ProjectedPoint::new(sx / n, sy / n)).expect("finite tile centers");
    Detection {
        id,
        member_tiles: members,
        centroid,
        max_probability: peak.1,
        // rounding in the sum must not push the mean outside [min, max]
        mean_probability: (sum_p / n).clamp(min_p, peak.1),
        peak_tile: peak.0,
    }
}

/// Drops detections whose centroid lies in any zone, preserving order.
///
/// A detection inside several zones is charged to the first of them.
pub fn filter_exclusions(
    detections: Vec<Detection>,
    zones: &[ExclusionZone],
) -> (Vec<Detection>, Vec<ExclusionSummary>) {
    let mut summary: Vec<ExclusionSummary> = zones
        .iter()
        .map(|z| ExclusionSummary {
            region: z.region,
            reason: z.reason.clone(),
            removed: 0,
        })
        .collect();
    let kept = detections
        .into_iter()
        .filter(|d| match zones.iter().position(|z| z.region.contains(d.centroid)) {
            Some(i) => {
                summary[i].removed += 1;
                false
            }
            None => true,
        })
        .collect();
    (kept, summary)
}

/// Supplies tile imagery to a deployment.
pub trait TileSource: Sync {
    fn contains(&self, tile: TileIndex) -> bool;
    fn fetch(&self, tile: TileIndex) -> Result<TileImage>;
}

/// Reads `{col}_{row}.png` files from a directory.
#[derive(Debug, Clone)]
pub struct DirectorySource {
    dir: PathBuf,
}

impl DirectorySource {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        DirectorySource { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_of(&self, tile: TileIndex) -> PathBuf {
        self.dir.join(protocol::tile_png_name(tile))
    }
}

impl TileSource for DirectorySource {
    fn contains(&self, tile: TileIndex) -> bool {
        self.path_of(tile).is_file()
    }

    fn fetch(&self, tile: TileIndex) -> Result<TileImage> {
        TileImage::load_png(&self.path_of(tile))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DeployConfig {
    pub adjacency: Adjacency,
    pub exec: Execution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub region: BoundingRegion,
    pub tile_count: usize,
    pub positive_count: usize,
    /// Detections before exclusion filtering.
    pub merged_count: usize,
    pub detection_count: usize,
    pub threshold: f64,
    pub adjacency: Adjacency,
    pub exclusions: Vec<ExclusionSummary>,
    pub wall_time_secs: f64,
}

impl RunManifest {
    /// The manifest with timing zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> RunManifest {
        RunManifest {
            wall_time_secs: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Deployment {
    pub detections: Vec<Detection>,
    pub manifest: RunManifest,
}

/// Runs the full deployment over every tile of `region`.
///
/// Aborts before scoring if the source lacks any tile of the region.
pub fn run_deployment(
    region: &BoundingRegion,
    source: &dyn TileSource,
    scorer: &dyn TileScorer,
    op: OperatingPoint,
    zones: &[ExclusionZone],
    config: DeployConfig,
) -> Result<Deployment> {
    let started = Instant::now();
    let tiles = enumerate_tiles(region)?;
    let missing: Vec<TileIndex> = tiles.iter().copied().filter(|t| !source.contains(*t)).collect();
    if !missing.is_empty() {
        return Err(Error::MissingTiles(missing));
    }
    let scores = score_source(&tiles, source, scorer, config.exec)?;
    Ok(finish(region, tiles.len(), &scores, op, zones, config.adjacency, started))
}

/// Fetches and scores `tiles` one at a time; output is sorted by `(row, col)`.
///
/// Imagery failures are reported as scorer failures for that tile.
pub fn score_source(
    tiles: &[TileIndex],
    source: &dyn TileSource,
    scorer: &dyn TileScorer,
    exec: Execution,
) -> Result<Vec<TileScore>> {
    let results = exec.map(tiles, |&tile| {
        let image = source.fetch(tile).map_err(|e| Error::Scorer {
            tile,
            message: format!("imagery: {e}"),
        })?;
        score_tile(scorer, tile, &image)
    })?;
    collect_sorted(results)
}

/// Deployment from precomputed scores (e.g. an external scorer's `scores.csv`).
///
/// Scores outside the region are ignored; region tiles without a score abort.
pub fn deploy_from_scores(
    region: &BoundingRegion,
    scores: &[TileScore],
    op: OperatingPoint,
    zones: &[ExclusionZone],
    adjacency: Adjacency,
) -> Result<Deployment> {
    let started = Instant::now();
    let tiles = enumerate_tiles(region)?;
    let by_tile: BTreeMap<TileIndex, f64> = scores.iter().map(|s| (s.tile, s.probability)).collect();
    let mut missing = Vec::new();
    let mut in_region = Vec::with_capacity(tiles.len());
    for &tile in &tiles {
        match by_tile.get(&tile) {
            Some(&probability) => in_region.push(TileScore { tile, probability }),
            None => missing.push(tile),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingTiles(missing));
    }
    Ok(finish(region, tiles.len(), &in_region, op, zones, adjacency, started))
}

fn finish(
    region: &BoundingRegion,
    tile_count: usize,
    scores: &[TileScore],
    op: OperatingPoint,
    zones: &[ExclusionZone],
    adjacency: Adjacency,
    started: Instant,
) -> Deployment {
    let positive = apply_threshold(scores, op);
    let merged = merge_positive_tiles(&positive, adjacency);
    let merged_count = merged.len();
    let (detections, exclusions) = filter_exclusions(merged, zones);
    let manifest = RunManifest {
        region: *region,
        tile_count,
        positive_count: positive.len(),
        merged_count,
        detection_count: detections.len(),
        threshold: op.threshold(),
        adjacency,
        exclusions,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Deployment {
        detections,
        manifest,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::tile_centroid;
    use proptest::prelude::*;

    fn ts(col: i32, row: i32, p: f64) -> TileScore {
        TileScore {
            tile: TileIndex::new(col, row),
            probability: p,
        }
    }

    #[test]
    fn threshold_is_inclusive() {
        let scores = [ts(0, 0, 0.0), ts(1, 0, 0.5), ts(2, 0, 1.0)];
        assert_eq!(apply_threshold(&scores, OperatingPoint::new(0.0).unwrap()).len(), 3);
        let top = apply_threshold(&scores, OperatingPoint::new(1.0).unwrap());
        assert_eq!(top, vec![ts(2, 0, 1.0)]);
        assert_eq!(apply_threshold(&scores, OperatingPoint::new(0.5).unwrap()).len(), 2);
        assert!(OperatingPoint::new(1.01).is_err());
        assert!(OperatingPoint::new(f64::NAN).is_err());
    }

    #[test]
    fn singleton_centroid_is_tile_centroid() {
        let dets = merge_positive_tiles(&[ts(0, 0, 0.9)], Adjacency::Four);
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].centroid, tile_centroid(TileIndex::new(0, 0)));
        assert_eq!(dets[0].id, DetectionId(1));
        assert_eq!(dets[0].max_probability, 0.9);
        assert_eq!(dets[0].mean_probability, 0.9);
    }

    #[test]
    fn components_and_adjacency() {
        let tiles = [ts(0, 0, 0.6), ts(0, 1, 0.8), ts(5, 5, 0.7)];
        let dets = merge_positive_tiles(&tiles, Adjacency::Four);
        assert_eq!(dets.iter().map(|d| d.tile_count()).collect::<Vec<_>>(), vec![2, 1]);
        assert_eq!(dets[0].peak_tile, TileIndex::new(0, 1));
        assert!((dets[0].mean_probability - 0.7).abs() < 1e-12);

        let diag = [ts(0, 0, 0.6), ts(1, 1, 0.6)];
        assert_eq!(merge_positive_tiles(&diag, Adjacency::Four).len(), 2);
        assert_eq!(merge_positive_tiles(&diag, Adjacency::Eight).len(), 1);
    }

    #[test]
    fn mean_never_exceeds_max() {
        let tiles = [ts(0, 0, 0.1), ts(1, 0, 0.1), ts(2, 0, 0.1)];
        let d = &merge_positive_tiles(&tiles, Adjacency::Four)[0];
        assert!(d.max_probability >= d.mean_probability);
        assert_eq!(d.mean_probability, 0.1);
        d.validate(Adjacency::Four).unwrap();
    }

    #[test]
    fn ordering_by_smallest_member() {
        // the L-shaped component reaches further left but starts on a later row
        let tiles = [ts(5, 0, 0.9), ts(0, 1, 0.9), ts(1, 1, 0.9), ts(1, 0, 0.9)];
        let dets = merge_positive_tiles(&tiles, Adjacency::Four);
        assert_eq!(dets[0].member_tiles[0], TileIndex::new(1, 0));
        assert_eq!(dets[1].member_tiles, vec![TileIndex::new(5, 0)]);
    }

    #[test]
    fn validate_catches_broken_detections() {
        let mut d = merge_positive_tiles(&[ts(0, 0, 0.9), ts(1, 0, 0.8)], Adjacency::Four).remove(0);
        d.validate(Adjacency::Four).unwrap();
        d.member_tiles.push(TileIndex::new(9, 9));
        assert!(d.validate(Adjacency::Four).is_err());
        d.member_tiles.clear();
        assert!(d.validate(Adjacency::Four).is_err());
    }

    fn zone(region: BoundingRegion) -> ExclusionZone {
        ExclusionZone {
            region,
            reason: "test".into(),
        }
    }

    #[test]
    fn exclusion_filtering() {
        let dets = merge_positive_tiles(&[ts(0, 0, 0.9), ts(10, 10, 0.9), ts(20, 0, 0.9)], Adjacency::Four);
        let (kept, summary) = filter_exclusions(dets.clone(), &[]);
        assert_eq!(kept, dets);
        assert!(summary.is_empty());

        let everything = zone(BoundingRegion::new(-1.0, -1.0, 1.0, 1.0).unwrap());
        let (kept, summary) = filter_exclusions(dets.clone(), &[everything]);
        assert!(kept.is_empty());
        assert_eq!(summary[0].removed, 3);

        let c = dets[1].centroid;
        let around = zone(BoundingRegion::new(c.lat() - 1e-3, c.lon() - 1e-3, c.lat() + 1e-3, c.lon() + 1e-3).unwrap());
        let (kept, summary) = filter_exclusions(dets.clone(), &[around.clone(), around]);
        assert_eq!(kept.iter().map(|d| d.id.0).collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!((summary[0].removed, summary[1].removed), (1, 0));
    }

    struct MapSource(BTreeMap<TileIndex, TileImage>);

    impl TileSource for MapSource {
        fn contains(&self, tile: TileIndex) -> bool {
            self.0.contains_key(&tile)
        }
        fn fetch(&self, tile: TileIndex) -> Result<TileImage> {
            Ok(self.0[&tile].clone())
        }
    }

    #[test]
    fn missing_imagery_aborts_with_tile_list() {
        let region = BoundingRegion::new(30.0, -100.0, 30.02, -99.98).unwrap();
        let mut tiles = enumerate_tiles(&region).unwrap();
        let dropped = tiles.split_off(tiles.len() - 2);
        let source = MapSource(tiles.into_iter().map(|t| (t, TileImage::filled([0, 0, 0]))).collect());
        let err = run_deployment(
            &region,
            &source,
            &crate::scoring::HeuristicScorer::default(),
            OperatingPoint::new(0.5).unwrap(),
            &[],
            DeployConfig::default(),
        )
        .unwrap_err();
        match err {
            Error::MissingTiles(m) => assert_eq!(m, dropped),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn deploy_from_scores_requires_full_coverage() {
        let region = BoundingRegion::new(30.0, -100.0, 30.01, -99.99).unwrap();
        let tiles = enumerate_tiles(&region).unwrap();
        let mut scores: Vec<TileScore> = tiles.iter().map(|&t| TileScore { tile: t, probability: 0.0 }).collect();
        scores[0].probability = 0.9;
        scores.push(ts(0, 0, 1.0)); // outside the region, ignored
        let dep = deploy_from_scores(&region, &scores, OperatingPoint::new(0.5).unwrap(), &[], Adjacency::Four).unwrap();
        assert_eq!(dep.detections.len(), 1);
        assert_eq!(dep.manifest.tile_count, tiles.len());
        assert_eq!(dep.manifest.positive_count, 1);
        scores.remove(1);
        assert!(matches!(
            deploy_from_scores(&region, &scores, OperatingPoint::new(0.5).unwrap(), &[], Adjacency::Four),
            Err(Error::MissingTiles(m)) if m.len() == 1
        ));
    }

    fn grid_strategy() -> impl Strategy<Value = (usize, usize, Vec<bool>)> {
        (1usize..30, 1usize..30).prop_flat_map(|(w, h)| {
            (Just(w), Just(h), proptest::collection::vec(proptest::bool::weighted(0.4), w * h))
        })
    }

    proptest! {
        #[test]
        fn components_partition_positive_set((w, _h, cells) in grid_strategy(), eight in any::<bool>()) {
            let adjacency = if eight { Adjacency::Eight } else { Adjacency::Four };
            let positive: Vec<TileScore> = cells.iter().enumerate().filter(|(_, &on)| on)
                .map(|(i, _)| ts((i % w) as i32, (i / w) as i32, 0.75)).collect();
            let dets = merge_positive_tiles(&positive, adjacency);
            prop_assert!(dets.len() <= positive.len());
            let mut all: Vec<TileIndex> = dets.iter().flat_map(|d| d.member_tiles.clone()).collect();
            all.sort();
            let mut expected: Vec<TileIndex> = positive.iter().map(|s| s.tile).collect();
            expected.sort();
            prop_assert_eq!(all, expected);
            for d in &dets {
                prop_assert!(d.validate(adjacency).is_ok());
            }
            // pairwise non-adjacent
            for (i, a) in dets.iter().enumerate() {
                for b in &dets[i + 1..] {
                    for ta in &a.member_tiles {
                        for tb in &b.member_tiles {
                            let (dc, dr) = ((ta.col - tb.col).abs(), (ta.row - tb.row).abs());
                            let touching = match adjacency {
                                Adjacency::Four => dc + dr == 1,
                                Adjacency::Eight => dc.max(dr) == 1,
                            };
                            prop_assert!(!touching);
                        }
                    }
                }
            }
        }

        #[test]
        fn filter_matches_containment_scan(
            pts in proptest::collection::vec((0i32..200, 0i32..200), 0..40),
            boxes in proptest::collection::vec((0.0f64..0.5, 0.0f64..0.5, 0.01f64..0.5, 0.01f64..0.5), 0..4),
        ) {
            let positive: Vec<TileScore> = pts.iter().map(|&(c, r)| ts(c * 3, r * 3, 0.9)).collect();
            let dets = merge_positive_tiles(&positive, Adjacency::Four);
            let zones: Vec<ExclusionZone> = boxes.iter()
                .map(|&(lat, lon, dlat, dlon)| zone(BoundingRegion::new(lat, lon, lat + dlat, lon + dlon).unwrap()))
                .collect();
            let (kept, _) = filter_exclusions(dets.clone(), &zones);
            let expected: Vec<Detection> = dets.into_iter().filter(|d| {
                !zones.iter().any(|z| {
                    let c = d.centroid;
                    c.lat() >= z.region.min_lat && c.lat() <= z.region.max_lat
                        && c.lon() >= z.region.min_lon && c.lon() <= z.region.max_lon
                })
            }).collect();
            prop_assert_eq!(kept, expected);
        }
    }
}
