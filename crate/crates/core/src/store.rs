//! Detection database and the human-review state machine.
//!
//! Review state is a pure fold over an append-only event log: detections
//! are ingested as `pending`, and each event classifies, rejects or reopens
//! one of them. The log is newline-delimited JSON, fsynced on every append.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use geojson::{Feature, FeatureCollection, GeoJson, JsonObject};
use serde::{Deserialize, Serialize};

use crate::benchmark::{DetectedFacility, FacilityType};
use crate::error::{Error, Result};
use crate::geo::GeoPoint;
use crate::pipeline::export::point_geometry;
use crate::pipeline::{Adjacency, Detection, DetectionId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewStatus {
    Pending,
    Confirmed,
    Rejected,
}

impl std::str::FromStr for ReviewStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| Error::Malformed(format!("unknown status {s:?}")))
    }
}

/// Facility class assigned at review time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewedType {
    OilRefinery,
    CrudeOilTerminal,
    LngTerminal,
}

impl ReviewedType {
    pub fn roll_up(&self) -> FacilityType {
        match self {
            ReviewedType::OilRefinery => FacilityType::OilRefinery,
            ReviewedType::CrudeOilTerminal | ReviewedType::LngTerminal => FacilityType::PetroleumTerminal,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ReviewedType::OilRefinery => "oil_refinery",
            ReviewedType::CrudeOilTerminal => "crude_oil_terminal",
            ReviewedType::LngTerminal => "lng_terminal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewedDetection {
    pub detection: Detection,
    pub status: ReviewStatus,
    pub facility_type: Option<ReviewedType>,
    pub tank_count: Option<u32>,
    /// Author and time of the latest event; absent until first reviewed.
    pub reviewer: Option<String>,
    pub reviewed_at: Option<DateTime<Utc>>,
}

impl ReviewedDetection {
    pub fn pending(detection: Detection) -> Self {
        ReviewedDetection {
            detection,
            status: ReviewStatus::Pending,
            facility_type: None,
            tank_count: None,
            reviewer: None,
            reviewed_at: None,
        }
    }

    pub fn id(&self) -> DetectionId {
        self.detection.id
    }

    pub fn rolled_up_type(&self) -> Option<FacilityType> {
        self.facility_type.map(|t| t.roll_up())
    }

    pub fn as_detected_facility(&self) -> Option<DetectedFacility> {
        match (self.status, self.facility_type) {
            (ReviewStatus::Confirmed, Some(t)) => Some(DetectedFacility {
                id: self.id(),
                facility_type: t.roll_up(),
                location: self.detection.centroid,
            }),
            _ => None,
        }
    }

    fn check_invariants(&self) -> Result<()> {
        let ok = match self.status {
            ReviewStatus::Pending => self.facility_type.is_none() && self.tank_count.is_none(),
            ReviewStatus::Confirmed => self.facility_type.is_some(),
            ReviewStatus::Rejected => self.facility_type.is_none(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::IllegalTransition(format!(
                "detection {} would violate the {:?} invariants",
                self.id(),
                self.status
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewAction {
    Classify,
    Reject,
    Reopen,
}

impl fmt::Display for ReviewAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReviewAction::Classify => "classify",
            ReviewAction::Reject => "reject",
            ReviewAction::Reopen => "reopen",
        })
    }
}

/// One line of the review log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewEvent {
    pub detection_id: DetectionId,
    pub action: ReviewAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub facility_type: Option<ReviewedType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tank_count: Option<u32>,
    pub reviewer: String,
    pub timestamp: DateTime<Utc>,
}

/// The row that results from applying `event` to `row`.
pub fn transition(row: &ReviewedDetection, event: &ReviewEvent) -> Result<ReviewedDetection> {
    if let Some(last) = row.reviewed_at {
        if event.timestamp < last {
            return Err(Error::IllegalTransition(format!(
                "event for detection {} at {} precedes its previous event at {last}",
                event.detection_id, event.timestamp
            )));
        }
    }
    let illegal = |why: &str| {
        Err(Error::IllegalTransition(format!(
            "{} on {:?} detection {}: {why}",
            event.action,
            row.status,
            row.id()
        )))
    };
    let mut next = row.clone();
    match (event.action, row.status) {
        (ReviewAction::Classify, ReviewStatus::Pending) => {
            let Some(t) = event.facility_type else {
                return illegal("facility_type is required");
            };
            next.status = ReviewStatus::Confirmed;
            next.facility_type = Some(t);
            next.tank_count = event.tank_count;
        }
        (ReviewAction::Reject, ReviewStatus::Pending) => {
            if event.facility_type.is_some() {
                return illegal("a rejection carries no facility_type");
            }
            next.status = ReviewStatus::Rejected;
            next.facility_type = None;
            next.tank_count = None;
        }
        (ReviewAction::Reopen, ReviewStatus::Confirmed | ReviewStatus::Rejected) => {
            next.status = ReviewStatus::Pending;
            next.facility_type = None;
            next.tank_count = None;
        }
        (ReviewAction::Reopen, ReviewStatus::Pending) => return illegal("already pending"),
        _ => return illegal("reopen it first"),
    }
    next.reviewer = Some(event.reviewer.clone());
    next.reviewed_at = Some(event.timestamp);
    next.check_invariants()?;
    Ok(next)
}

/// Append-only, fsynced event log.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: File,
}

impl EventLog {
    pub fn open(path: &Path) -> Result<Self> {
        crate::io_util::ensure_parent(path)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(EventLog {
            path: path.to_owned(),
            file,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes one line and syncs it to disk before returning.
    pub fn append(&mut self, event: &ReviewEvent) -> Result<()> {
        let mut line = serde_json::to_vec(event)?;
        line.push(b'\n');
        self.file
            .write_all(&line)
            .and_then(|_| self.file.sync_data())
            .map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads a log. A torn final line (no trailing newline) is dropped with a warning.
pub fn read_events(path: &Path) -> Result<Vec<ReviewEvent>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut reader = BufReader::new(file);
    let mut events = Vec::new();
    let mut line = String::new();
    let mut lineno = 0;
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        lineno += 1;
        if !line.ends_with('\n') {
            log::warn!("{}: ignoring incomplete final line {lineno}", path.display());
            break;
        }
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line)
            .map_err(|e| Error::Malformed(format!("{} line {lineno}: {e}", path.display())))?;
        events.push(event);
    }
    Ok(events)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusCounts {
    pub pending: usize,
    pub confirmed: usize,
    pub rejected: usize,
}

#[derive(Debug, Default)]
pub struct Store {
    rows: BTreeMap<DetectionId, ReviewedDetection>,
    events: Vec<ReviewEvent>,
    log: Option<EventLog>,
}

impl Store {
    /// A store without persistence.
    pub fn in_memory() -> Self {
        Store::default()
    }

    /// Ingests `detections`, replays the log at `log_path` and keeps it open
    /// for further appends.
    pub fn open(log_path: &Path, detections: Vec<Detection>) -> Result<Self> {
        let events = read_events(log_path)?;
        let mut store = Store::replay(detections, &events)?;
        store.log = Some(EventLog::open(log_path)?);
        Ok(store)
    }

    /// Rebuilds state from scratch by folding `events` over freshly ingested detections.
    pub fn replay(detections: Vec<Detection>, events: &[ReviewEvent]) -> Result<Self> {
        let mut store = Store::in_memory();
        store.ingest(detections)?;
        for e in events {
            store.apply_review(e.clone())?;
        }
        Ok(store)
    }

    /// Adds detections as pending; ids already present are skipped.
    /// Nothing is inserted if any detection is malformed.
    pub fn ingest(&mut self, detections: Vec<Detection>) -> Result<usize> {
        for d in &detections {
            // 8-connectivity is implied by 4-connectivity, so this accepts either merge mode
            d.validate(Adjacency::Eight)?;
        }
        let mut seen = HashSet::new();
        let mut inserted = 0;
        for d in detections {
            if self.rows.contains_key(&d.id) || !seen.insert(d.id) {
                log::warn!("skipping duplicate detection id {}", d.id);
                continue;
            }
            self.rows.insert(d.id, ReviewedDetection::pending(d));
            inserted += 1;
        }
        Ok(inserted)
    }

    /// Validates and applies one event. With a log attached the event is
    /// durably appended before the in-memory state changes.
    pub fn apply_review(&mut self, event: ReviewEvent) -> Result<ReviewedDetection> {
        let row = self
            .rows
            .get(&event.detection_id)
            .ok_or(Error::UnknownDetection(event.detection_id.0))?;
        let next = transition(row, &event)?;
        if let Some(log) = self.log.as_mut() {
            log.append(&event)?;
        }
        self.events.push(event);
        self.rows.insert(next.id(), next.clone());
        Ok(next)
    }

    pub fn get(&self, id: DetectionId) -> Option<&ReviewedDetection> {
        self.rows.get(&id)
    }

    /// All rows ordered by id.
    pub fn rows(&self) -> impl Iterator<Item = &ReviewedDetection> {
        self.rows.values()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn events(&self) -> &[ReviewEvent] {
        &self.events
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.log.as_ref().map(EventLog::path)
    }

    pub fn verified_facilities(&self) -> Vec<&ReviewedDetection> {
        self.rows
            .values()
            .filter(|r| r.status == ReviewStatus::Confirmed)
            .collect()
    }

    pub fn detected_facilities(&self) -> Vec<DetectedFacility> {
        self.rows.values().filter_map(|r| r.as_detected_facility()).collect()
    }

    pub fn status_counts(&self) -> StatusCounts {
        let mut c = StatusCounts::default();
        for r in self.rows.values() {
            match r.status {
                ReviewStatus::Pending => c.pending += 1,
                ReviewStatus::Confirmed => c.confirmed += 1,
                ReviewStatus::Rejected => c.rejected += 1,
            }
        }
        c
    }

    /// Confirmed facility counts after rolling terminal subtypes up.
    pub fn confirmed_by_type(&self) -> BTreeMap<FacilityType, usize> {
        let mut counts: BTreeMap<FacilityType, usize> =
            FacilityType::ALL.iter().map(|&t| (t, 0)).collect();
        for f in self.detected_facilities() {
            *counts.entry(f.facility_type).or_default() += 1;
        }
        counts
    }

    /// Canonical serialization of the review state.
    pub fn snapshot_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(&self.rows.values().collect::<Vec<_>>())?)
    }
}

/// Confirmed facilities as GeoJSON points with facility type, rolled-up
/// category and tank count.
pub fn verified_geojson(rows: &[&ReviewedDetection]) -> FeatureCollection {
    let features = rows
        .iter()
        .filter_map(|r| {
            let t = r.facility_type?;
            let c = r.detection.centroid;
            let mut props = JsonObject::new();
            props.insert("id".into(), r.id().0.into());
            props.insert("facility_type".into(), t.as_str().into());
            props.insert("category".into(), t.roll_up().as_str().into());
            props.insert("tank_count".into(), r.tank_count.map_or(serde_json::Value::Null, Into::into));
            Some(Feature {
                bbox: None,
                geometry: Some(point_geometry(c.lat(), c.lon())),
                id: None,
                properties: Some(props),
                foreign_members: None,
            })
        })
        .collect();
    FeatureCollection {
        bbox: None,
        features,
        foreign_members: None,
    }
}

/// Reads facilities back from [`verified_geojson`] output. `facility_type`
/// may be a review subtype or an already rolled-up category.
pub fn read_verified_geojson(path: &Path) -> Result<Vec<DetectedFacility>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let gj: GeoJson = text.parse().map_err(|e| Error::GeoJson(Box::new(e)))?;
    let GeoJson::FeatureCollection(fc) = gj else {
        return Err(Error::Malformed(format!("{}: expected a FeatureCollection", path.display())));
    };
    let bad = |i: usize, what: &str| Error::Malformed(format!("{} feature {i}: {what}", path.display()));
    fc.features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let (lat, lon) = match f.geometry.as_ref().map(|g| &g.value) {
                Some(geojson::Value::Point(c)) if c.len() >= 2 => (c[1], c[0]),
                _ => return Err(bad(i, "not a Point")),
            };
            let id = f
                .property("id")
                .and_then(|v| v.as_u64())
                .ok_or_else(|| bad(i, "missing numeric id"))?;
            let ty = f
                .property("facility_type")
                .and_then(|v| v.as_str())
                .ok_or_else(|| bad(i, "missing facility_type"))?;
            let facility_type = match ty {
                "oil_refinery" => FacilityType::OilRefinery,
                "petroleum_terminal" | "crude_oil_terminal" | "lng_terminal" => FacilityType::PetroleumTerminal,
                other => return Err(bad(i, &format!("unknown facility_type {other:?}"))),
            };
            Ok(DetectedFacility {
                id: DetectionId(id as u32),
                facility_type,
                location: GeoPoint::new(lat, lon)?,
            })
        })
        .collect()
}
