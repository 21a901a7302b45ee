//! Detection exports: GeoJSON points, flat CSV, and full JSON for ingest.

use std::path::Path;

use geojson::{Feature, FeatureCollection, Geometry, JsonObject, Value};
use serde::{Deserialize, Serialize};

use super::Detection;
use crate::error::{Error, Result};
use crate::io_util::{ensure_parent, read_json, write_json};

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    id: u32,
    lat: f64,
    lon: f64,
    max_probability: f64,
    mean_probability: f64,
    tile_count: usize,
}

pub fn point_geometry(lat: f64, lon: f64) -> Geometry {
    Geometry::new(Value::Point(vec![lon, lat]))
}

pub fn detections_geojson(detections: &[Detection]) -> FeatureCollection {
    let features = detections
        .iter()
        .map(|d| {
            let mut props = JsonObject::new();
            props.insert("id".into(), d.id.0.into());
            props.insert("max_probability".into(), d.max_probability.into());
            props.insert("mean_probability".into(), d.mean_probability.into());
            props.insert("tile_count".into(), d.tile_count().into());
            Feature {
                bbox: None,
                geometry: Some(point_geometry(d.centroid.lat(), d.centroid.lon())),
                id: None,
                properties: Some(props),
                foreign_members: None,
            }
        })
        .collect();
    FeatureCollection {
        bbox: None,
        features,
        foreign_members: None,
    }
}

pub fn write_geojson(path: &Path, fc: &FeatureCollection) -> Result<()> {
    write_json(path, fc)
}

pub fn write_detections_geojson(path: &Path, detections: &[Detection]) -> Result<()> {
    write_geojson(path, &detections_geojson(detections))
}

pub fn write_detections_csv(path: &Path, detections: &[Detection]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    for d in detections {
        w.serialize(CsvRow {
            id: d.id.0,
            lat: d.centroid.lat(),
            lon: d.centroid.lon(),
            max_probability: d.max_probability,
            mean_probability: d.mean_probability,
            tile_count: d.tile_count(),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Full detection records, including member tiles, as consumed by the review store.
pub fn write_detections_json(path: &Path, detections: &[Detection]) -> Result<()> {
    write_json(path, detections)
}

pub fn read_detections_json(path: &Path) -> Result<Vec<Detection>> {
    read_json(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::TileIndex;
    use crate::pipeline::{merge_positive_tiles, Adjacency};
    use crate::scoring::TileScore;

    fn sample() -> Vec<Detection> {
        let scores: Vec<TileScore> = [(0, 0, 0.9), (1, 0, 0.7), (8, 8, 0.6)]
            .iter()
            .map(|&(c, r, p)| TileScore { tile: TileIndex::new(c, r), probability: p })
            .collect();
        merge_positive_tiles(&scores, Adjacency::Four)
    }

    #[test]
    fn geojson_shape() {
        let fc = detections_geojson(&sample());
        let v = serde_json::to_value(&fc).unwrap();
        assert_eq!(v["type"], "FeatureCollection");
        let f = &v["features"][0];
        assert_eq!(f["geometry"]["type"], "Point");
        assert_eq!(f["properties"]["id"], 1);
        assert_eq!(f["properties"]["tile_count"], 2);
        assert_eq!(f["properties"]["max_probability"], 0.9);
        let lon = f["geometry"]["coordinates"][0].as_f64().unwrap();
        assert_eq!(lon, sample()[0].centroid.lon());
    }

    #[test]
    fn csv_and_json_files() {
        let dir = tempfile::tempdir().unwrap();
        let dets = sample();
        let csv_path = dir.path().join("out/detections.csv");
        write_detections_csv(&csv_path, &dets).unwrap();
        let text = std::fs::read_to_string(&csv_path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("id,lat,lon,max_probability,mean_probability,tile_count"));
        assert!(lines.next().unwrap().starts_with("1,"));

        let json_path = dir.path().join("detections.json");
        write_detections_json(&json_path, &dets).unwrap();
        assert_eq!(read_detections_json(&json_path).unwrap(), dets);
    }
}
