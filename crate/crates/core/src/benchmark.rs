//! Comparison of verified detections against public facility datasets.
//!
//! Records from all sources are clustered per facility type by single
//! linkage within the dedup radius. A cluster is covered when some detected
//! facility lies within the coverage radius of its representative location,
//! and a detection is new when neither a cluster nor a training location is
//! within that radius. All distance comparisons are inclusive.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use geojson::GeoJson;
use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine_km, project, unproject, GeoPoint, ProjectedPoint, EARTH_RADIUS_KM};
use crate::io_util::ensure_parent;
use crate::pipeline::DetectionId;
use crate::scoring::protocol::map_csv_open;

pub const DEDUP_RADIUS_KM: f64 = 2.0;
pub const COVERAGE_RADIUS_KM: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "GOGI")]
    Gogi,
    #[serde(rename = "GHGRP")]
    Ghgrp,
    #[serde(rename = "HIFLD")]
    Hifld,
    #[serde(rename = "EIA")]
    Eia,
    #[serde(rename = "other")]
    Other,
}

/// Reporting category; terminal subtypes roll up to `PetroleumTerminal`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FacilityType {
    OilRefinery,
    PetroleumTerminal,
}

impl FacilityType {
    pub const ALL: [FacilityType; 2] = [FacilityType::OilRefinery, FacilityType::PetroleumTerminal];

    pub fn as_str(&self) -> &'static str {
        match self {
            FacilityType::OilRefinery => "oil_refinery",
            FacilityType::PetroleumTerminal => "petroleum_terminal",
        }
    }
}

impl fmt::Display for FacilityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacilityRecord {
    pub source: Source,
    pub facility_type: FacilityType,
    pub location: GeoPoint,
    pub raw_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordRow {
    source: Source,
    facility_type: FacilityType,
    lat: f64,
    lon: f64,
    raw_id: String,
}

/// Reads records from CSV (`source,facility_type,lat,lon,raw_id`) or from a
/// GeoJSON collection of Points carrying the same properties.
pub fn read_records(path: &Path) -> Result<Vec<FacilityRecord>> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    if ext.eq_ignore_ascii_case("geojson") || ext.eq_ignore_ascii_case("json") {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        return records_from_geojson(&text)
            .map_err(|e| Error::Malformed(format!("{}: {e}", path.display())));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| map_csv_open(path, e))?;
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<RecordRow>().enumerate() {
        let row = row.map_err(|e| Error::Malformed(format!("{} row {}: {e}", path.display(), i + 1)))?;
        out.push(FacilityRecord {
            source: row.source,
            facility_type: row.facility_type,
            location: GeoPoint::new(row.lat, row.lon)?,
            raw_id: row.raw_id,
        });
    }
    Ok(out)
}

pub fn write_records_csv(path: &Path, records: &[FacilityRecord]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(RecordRow {
            source: r.source,
            facility_type: r.facility_type,
            lat: r.location.lat(),
            lon: r.location.lon(),
            raw_id: r.raw_id.clone(),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn records_from_geojson(text: &str) -> Result<Vec<FacilityRecord>> {
    let gj: GeoJson = text.parse().map_err(|e| Error::GeoJson(Box::new(e)))?;
    let GeoJson::FeatureCollection(fc) = gj else {
        return Err(Error::Malformed("expected a FeatureCollection".into()));
    };
    fc.features
        .into_iter()
        .enumerate()
        .map(|(i, f)| {
            let (lat, lon) = match f.geometry.as_ref().map(|g| &g.value) {
                Some(geojson::Value::Point(c)) if c.len() >= 2 => (c[1], c[0]),
                _ => return Err(Error::Malformed(format!("feature {i}: not a Point"))),
            };
            let props = serde_json::Value::Object(f.properties.unwrap_or_default());
            let field = |name: &str| {
                props
                    .get(name)
                    .cloned()
                    .ok_or_else(|| Error::Malformed(format!("feature {i}: missing {name}")))
            };
            let raw_id = match field("raw_id")? {
                serde_json::Value::String(s) => s,
                other => other.to_string(),
            };
            Ok(FacilityRecord {
                source: serde_json::from_value(field("source")?)?,
                facility_type: serde_json::from_value(field("facility_type")?)?,
                location: GeoPoint::new(lat, lon)?,
                raw_id,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub facility_type: FacilityType,
    pub location: GeoPoint,
    /// Indices into [`CombinedDataset::records`], ascending.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedDataset {
    pub records: Vec<FacilityRecord>,
    /// Ordered by facility type, then by smallest member index.
    pub clusters: Vec<Cluster>,
}

impl CombinedDataset {
    pub fn count(&self, facility_type: FacilityType) -> usize {
        self.clusters
            .iter()
            .filter(|c| c.facility_type == facility_type)
            .count()
    }
}

/// Single-linkage clustering per facility type: records within
/// `radius_km` of each other, directly or through a chain, share a cluster.
pub fn dedup(records: Vec<FacilityRecord>, radius_km: f64) -> Result<CombinedDataset> {
    // great-circle distance is never shorter than the meridian arc, so a
    // latitude window prunes candidate pairs exactly
    let window_deg = (radius_km / EARTH_RADIUS_KM).to_degrees() + 1e-9;
    let mut clusters = Vec::new();

    for ty in FacilityType::ALL {
        let mut idx: Vec<usize> = (0..records.len())
            .filter(|&i| records[i].facility_type == ty)
            .collect();
        if idx.is_empty() {
            continue;
        }
        idx.sort_by(|&a, &b| {
            records[a]
                .location
                .lat()
                .total_cmp(&records[b].location.lat())
                .then(a.cmp(&b))
        });
        let mut uf = UnionFind::<usize>::new(idx.len());
        for (i, &a) in idx.iter().enumerate() {
            let pa = records[a].location;
            for (j, &b) in idx.iter().enumerate().skip(i + 1) {
                let pb = records[b].location;
                if pb.lat() - pa.lat() > window_deg {
                    break;
                }
                if haversine_km(pa, pb) <= radius_km {
                    uf.union(i, j);
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &rec) in idx.iter().enumerate() {
            groups.entry(uf.find(i)).or_default().push(rec);
        }
        let mut ty_clusters = groups
            .into_values()
            .map(|mut members| {
                members.sort_unstable();
                let location = projected_mean(members.iter().map(|&m| records[m].location))?;
                Ok(Cluster {
                    facility_type: ty,
                    location,
                    members,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ty_clusters.sort_by_key(|c| c.members[0]);
        clusters.extend(ty_clusters);
    }
    Ok(CombinedDataset { records, clusters })
}

/// Mean of points in projected meters, mapped back to lat/lon.
pub fn projected_mean(points: impl IntoIterator<Item = GeoPoint>) -> Result<GeoPoint> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for p in points {
        let q = project(p)?;
        sx += q.x;
        sy += q.y;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Domain("mean of no points".into()));
    }
    unproject(ProjectedPoint::new(sx / n as f64, sy / n as f64))
}

/// A reviewed, confirmed facility as used for benchmarking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectedFacility {
    pub id: DetectionId,
    pub facility_type: FacilityType,
    pub location: GeoPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeCoverage {
    pub facility_type: FacilityType,
    pub total: usize,
    pub covered: usize,
    pub fraction: f64,
    /// Set when there were no benchmark clusters of this type.
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub radius_km: f64,
    pub by_type: Vec<TypeCoverage>,
    /// Per cluster (same order as the combined dataset): covered or not.
    pub covered_clusters: Vec<bool>,
}

impl CoverageReport {
    pub fn get(&self, ty: FacilityType) -> &TypeCoverage {
        self.by_type
            .iter()
            .find(|c| c.facility_type == ty)
            .expect("every facility type is reported")
    }
}

fn any_within(p: GeoPoint, others: impl IntoIterator<Item = GeoPoint>, radius_km: f64) -> bool {
    others.into_iter().any(|o| haversine_km(p, o) <= radius_km)
}

/// Clusters covered by any detected facility within `radius_km`, regardless of the
/// detection's own type.
pub fn coverage(combined: &CombinedDataset, detections: &[DetectedFacility], radius_km: f64) -> CoverageReport {
    let covered_clusters: Vec<bool> = combined
        .clusters
        .iter()
        .map(|c| any_within(c.location, detections.iter().map(|d| d.location), radius_km))
        .collect();
    let by_type = FacilityType::ALL
        .iter()
        .map(|&ty| {
            let (mut total, mut covered) = (0, 0);
            for (c, &hit) in combined.clusters.iter().zip(&covered_clusters) {
                if c.facility_type == ty {
                    total += 1;
                    covered += usize::from(hit);
                }
            }
            TypeCoverage {
                facility_type: ty,
                total,
                covered,
                fraction: if total == 0 { 0.0 } else { covered as f64 / total as f64 },
                empty: total == 0,
            }
        })
        .collect();
    CoverageReport {
        radius_km,
        by_type,
        covered_clusters,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewDetections {
    pub radius_km: f64,
    /// Ids of new detections per facility type, in input order.
    pub by_type: BTreeMap<FacilityType, Vec<DetectionId>>,
}

impl NewDetections {
    pub fn count(&self, ty: FacilityType) -> usize {
        self.by_type.get(&ty).map_or(0, Vec::len)
    }
}

/// Detections with no benchmark cluster and no training location within `radius_km`.
pub fn new_detections(
    combined: &CombinedDataset,
    detections: &[DetectedFacility],
    training_locations: &[GeoPoint],
    radius_km: f64,
) -> NewDetections {
    let mut by_type: BTreeMap<FacilityType, Vec<DetectionId>> =
        FacilityType::ALL.iter().map(|&t| (t, Vec::new())).collect();
    for d in detections {
        let known = any_within(d.location, combined.clusters.iter().map(|c| c.location), radius_km)
            || any_within(d.location, training_locations.iter().copied(), radius_km);
        if !known {
            by_type.entry(d.facility_type).or_default().push(d.id);
        }
    }
    NewDetections { radius_km, by_type }
}

/// One row of the detection statistics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub facility_type: FacilityType,
    pub total_detections: usize,
    pub benchmark_total: usize,
    pub covered: usize,
    /// Coverage in percent, rounded to one decimal.
    pub coverage_percent: f64,
    pub new_detections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Report {
    pub rows: Vec<Table1Row>,
}

impl Table1Report {
    pub fn row(&self, ty: FacilityType) -> &Table1Row {
        self.rows
            .iter()
            .find(|r| r.facility_type == ty)
            .expect("every facility type is reported")
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "facility_type",
            "total_detections",
            "benchmark_total",
            "covered",
            "coverage_percent",
            "new_detections",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.facility_type.to_string(),
                r.total_detections.to_string(),
                r.benchmark_total.to_string(),
                r.covered.to_string(),
                format!("{:.1}", r.coverage_percent),
                r.new_detections.to_string(),
            ])?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Malformed(format!("csv buffer: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let rows = r
            .deserialize::<Table1Row>()
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Table1Report { rows })
    }
}

pub fn round_one_decimal(percent: f64) -> f64 {
    (percent * 10.0).round() / 10.0
}

pub fn table1_report(
    detections: &[DetectedFacility],
    coverage: &CoverageReport,
    new: &NewDetections,
) -> Table1Report {
    let rows = FacilityType::ALL
        .iter()
        .map(|&ty| {
            let cov = coverage.get(ty);
            Table1Row {
                facility_type: ty,
                total_detections: detections.iter().filter(|d| d.facility_type == ty).count(),
                benchmark_total: cov.total,
                covered: cov.covered,
                coverage_percent: round_one_decimal(cov.fraction * 100.0),
                new_detections: new.count(ty),
            }
        })
        .collect();
    Table1Report { rows }
}

/// Everything produced by one benchmark comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub combined: CombinedDataset,
    pub coverage: CoverageReport,
    pub new_detections: NewDetections,
    pub table: Table1Report,
}

pub fn compare(
    combined: CombinedDataset,
    detections: &[DetectedFacility],
    training_locations: &[GeoPoint],
) -> Comparison {
    let coverage = coverage(&combined, detections, COVERAGE_RADIUS_KM);
    let new = new_detections(&combined, detections, training_locations, COVERAGE_RADIUS_KM);
    let table = table1_report(detections, &coverage, &new);
    Comparison {
        combined,
        coverage,
        new_detections: new,
        table,
    }
}

#[derive(Deserialize)]
struct LocationRow {
    lat: f64,
    lon: f64,
}

/// Training-set locations from a CSV with `lat` and `lon` columns.
pub fn read_locations(path: &Path) -> Result<Vec<GeoPoint>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| map_csv_open(path, e))?;
    r.deserialize::<LocationRow>()
        .map(|row| {
            let row = row.map_err(|e| Error::Malformed(format!("{}: {e}", path.display())))?;
            GeoPoint::new(row.lat, row.lon)
        })
        .collect()
}

pub fn write_locations(path: &Path, points: &[GeoPoint]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["lat", "lon"])?;
    for p in points {
        w.write_record([p.lat().to_string(), p.lon().to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
