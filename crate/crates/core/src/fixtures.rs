//! Deterministic reference fixtures that reproduce the published counts:
//! dataset split sizes, the test-split confusion matrix, the benchmark
//! comparison table and the review outcome of the national deployment.

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::benchmark::{FacilityRecord, FacilityType, Source};
use crate::evaluation::{Label, LabeledScore, NegativeCategory, Split, REFERENCE_SPLITS};
use crate::geo::{tile_centroid, tile_of, GeoPoint, EARTH_RADIUS_KM};
use crate::pipeline::{Detection, DetectionId};
use crate::store::{ReviewAction, ReviewEvent, ReviewedType};

/// Test-split negatives scored above 0.5.
pub const TEST_FALSE_POSITIVES: usize = 3;
/// Validation negatives scored above the lowest validation positive.
pub const VALIDATION_HARD_NEGATIVES: usize = 3;

const NEGATIVE_MIX: [NegativeCategory; 5] = [
    NegativeCategory::Random,
    NegativeCategory::Urban,
    NegativeCategory::WellPad,
    NegativeCategory::Cropland,
    NegativeCategory::Forest,
];

/// Labeled scores with the reference split sizes.
///
/// At threshold 0.5 the test split yields `tp=9, fp=3, fn=0, tn=694`; the
/// validation split has three negatives above its lowest positive, so the
/// recall-1.0 operating point has precision 13/16.
pub fn reference_labeled_scores(seed: u64) -> Vec<LabeledScore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let push = |split: Split, label: Label, p: f64, out: &mut Vec<LabeledScore>| {
        let negative_category = match label {
            Label::Positive => None,
            Label::Negative => Some(NEGATIVE_MIX[out.len() % NEGATIVE_MIX.len()]),
        };
        out.push(LabeledScore {
            id: format!("{}-{:05}", split_tag(split), out.len()),
            split,
            label,
            probability: p,
            negative_category,
        });
    };

    let s = REFERENCE_SPLITS;
    for _ in 0..s.train.positive {
        push(Split::Train, Label::Positive, rng.random_range(0.4..1.0), &mut out);
    }
    for _ in 0..s.train.negative {
        push(Split::Train, Label::Negative, rng.random_range(0.0..0.6), &mut out);
    }

    let min_pos = 0.35;
    push(Split::Validation, Label::Positive, min_pos, &mut out);
    for _ in 1..s.validation.positive {
        push(Split::Validation, Label::Positive, rng.random_range(min_pos..1.0), &mut out);
    }
    for i in 0..s.validation.negative as usize {
        let p = if i < VALIDATION_HARD_NEGATIVES {
            rng.random_range(0.36..0.95)
        } else {
            rng.random_range(0.0..0.34)
        };
        push(Split::Validation, Label::Negative, p, &mut out);
    }

    for _ in 0..s.test.positive {
        push(Split::Test, Label::Positive, rng.random_range(0.6..1.0), &mut out);
    }
    for i in 0..s.test.negative as usize {
        let p = if i < TEST_FALSE_POSITIVES {
            rng.random_range(0.55..0.95)
        } else {
            rng.random_range(0.0..0.45)
        };
        push(Split::Test, Label::Negative, p, &mut out);
    }
    out.shuffle(&mut rng);
    out
}

fn split_tag(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Validation => "val",
        Split::Test => "test",
    }
}

/// Site counts of the benchmark fixture.
pub mod layout {
    pub const REFINERY_CLUSTERS: usize = 147;
    pub const REFINERY_COVERED: usize = 108;
    pub const REFINERY_NEW: usize = 6;
    pub const TERMINAL_CLUSTERS: usize = 1222;
    /// Sites holding two terminal clusters 2.6 km apart, both covered by one detection.
    pub const TERMINAL_PAIR_SITES: usize = 98;
    pub const TERMINAL_SINGLE_COVERED: usize = 96;
    pub const TERMINAL_COVERED: usize = 2 * TERMINAL_PAIR_SITES + TERMINAL_SINGLE_COVERED;
    pub const TERMINAL_NEW: usize = 142;
    pub const REFINERY_DETECTIONS: usize = REFINERY_COVERED + REFINERY_NEW;
    pub const TERMINAL_DETECTIONS: usize = TERMINAL_PAIR_SITES + TERMINAL_SINGLE_COVERED + TERMINAL_NEW;
    pub const TOTAL_DETECTIONS: usize = 1902;
}

/// Benchmark records, training locations, raw detections and the review log
/// that confirms 114 refineries and 336 terminals out of 1,902 detections.
#[derive(Debug, Clone)]
pub struct ReferenceBenchmark {
    pub records: Vec<FacilityRecord>,
    pub training_locations: Vec<GeoPoint>,
    pub detections: Vec<Detection>,
    pub events: Vec<ReviewEvent>,
}

struct Builder {
    rng: ChaCha8Rng,
    sites: std::vec::IntoIter<(f64, f64)>,
    out: ReferenceBenchmark,
    clock: DateTime<Utc>,
}

const SOURCES: [Source; 4] = [Source::Gogi, Source::Ghgrp, Source::Hifld, Source::Eia];

fn offset(lat: f64, lon: f64, east_km: f64, north_km: f64) -> GeoPoint {
    let km_per_deg = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
    GeoPoint::new(
        lat + north_km / km_per_deg,
        lon + east_km / (km_per_deg * lat.to_radians().cos()),
    )
    .expect("fixture sites stay in range")
}

impl Builder {
    fn site(&mut self) -> (f64, f64) {
        self.sites.next().expect("enough fixture sites")
    }

    /// One to three records from distinct sources, jittered by at most 0.2 km.
    fn cluster(&mut self, ty: FacilityType, lat: f64, lon: f64) {
        let n = self.rng.random_range(1..=3);
        let mut sources = SOURCES;
        sources.shuffle(&mut self.rng);
        for &source in &sources[..n] {
            let (e, no) = (self.rng.random_range(-0.14..0.14), self.rng.random_range(-0.14..0.14));
            let id = self.out.records.len();
            self.out.records.push(FacilityRecord {
                source,
                facility_type: ty,
                location: offset(lat, lon, e, no),
                raw_id: format!("rec-{id:05}"),
            });
        }
    }

    fn detection(&mut self, at: GeoPoint, review: Option<ReviewedType>) {
        let tile = tile_of(at).expect("fixture sites are inside the Mercator band");
        let id = DetectionId(self.out.detections.len() as u32 + 1);
        let p = self.rng.random_range(0.6..1.0);
        self.out.detections.push(Detection {
            id,
            member_tiles: vec![tile],
            centroid: tile_centroid(tile),
            max_probability: p,
            mean_probability: p,
            peak_tile: tile,
        });
        self.clock += Duration::seconds(30);
        let event = match review {
            Some(t) => ReviewEvent {
                detection_id: id,
                action: ReviewAction::Classify,
                facility_type: Some(t),
                tank_count: Some(self.rng.random_range(0..=80)),
                reviewer: "fixture".into(),
                timestamp: self.clock,
            },
            None => ReviewEvent {
                detection_id: id,
                action: ReviewAction::Reject,
                facility_type: None,
                tank_count: None,
                reviewer: "fixture".into(),
                timestamp: self.clock,
            },
        };
        self.out.events.push(event);
    }

    fn terminal_type(&mut self) -> ReviewedType {
        if self.rng.random_bool(0.5) {
            ReviewedType::CrudeOilTerminal
        } else {
            ReviewedType::LngTerminal
        }
    }
}

pub fn reference_benchmark(seed: u64) -> ReferenceBenchmark {
    use layout::*;
    // sites 0.25° apart over 30–45°N, 120–75°W: always > 19 km from each other
    let mut sites: Vec<(f64, f64)> = (0..60)
        .flat_map(|i| (0..180).map(move |j| (30.0 + 0.25 * i as f64, -120.0 + 0.25 * j as f64)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sites.shuffle(&mut rng);
    let mut b = Builder {
        rng,
        sites: sites.into_iter(),
        out: ReferenceBenchmark {
            records: Vec::new(),
            training_locations: Vec::new(),
            detections: Vec::new(),
            events: Vec::new(),
        },
        clock: Utc.with_ymd_and_hms(2020, 6, 1, 9, 0, 0).unwrap(),
    };
    use FacilityType::{OilRefinery, PetroleumTerminal};

    for _ in 0..REFINERY_COVERED {
        let (lat, lon) = b.site();
        b.cluster(OilRefinery, lat, lon);
        b.detection(offset(lat, lon, 0.5, 0.0), Some(ReviewedType::OilRefinery));
    }
    for _ in REFINERY_COVERED..REFINERY_CLUSTERS {
        let (lat, lon) = b.site();
        b.cluster(OilRefinery, lat, lon);
        b.out.training_locations.push(offset(lat, lon, 0.0, 0.3));
    }
    for _ in 0..REFINERY_NEW {
        let (lat, lon) = b.site();
        b.detection(GeoPoint::new(lat, lon).unwrap(), Some(ReviewedType::OilRefinery));
    }
    for _ in 0..TERMINAL_PAIR_SITES {
        let (lat, lon) = b.site();
        b.cluster(PetroleumTerminal, lat, lon);
        let east = offset(lat, lon, 2.6, 0.0);
        b.cluster(PetroleumTerminal, east.lat(), east.lon());
        let t = b.terminal_type();
        b.detection(offset(lat, lon, 1.3, 0.0), Some(t));
    }
    for _ in 0..TERMINAL_SINGLE_COVERED {
        let (lat, lon) = b.site();
        b.cluster(PetroleumTerminal, lat, lon);
        let t = b.terminal_type();
        b.detection(offset(lat, lon, 0.0, 0.5), Some(t));
    }
    for _ in TERMINAL_COVERED..TERMINAL_CLUSTERS {
        let (lat, lon) = b.site();
        b.cluster(PetroleumTerminal, lat, lon);
    }
    for _ in 0..TERMINAL_NEW {
        let (lat, lon) = b.site();
        let t = b.terminal_type();
        b.detection(GeoPoint::new(lat, lon).unwrap(), Some(t));
    }
    while b.out.detections.len() < TOTAL_DETECTIONS {
        let (lat, lon) = b.site();
        b.detection(GeoPoint::new(lat, lon).unwrap(), None);
    }
    b.out
}
