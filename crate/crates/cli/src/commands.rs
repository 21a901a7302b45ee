use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use tilescan_core::benchmark::{compare, dedup, read_locations, read_records, Comparison, DEDUP_RADIUS_KM};
use tilescan_core::evaluation::{
    compute_metrics, confusion, read_labeled_scores, select_operating_point, LabeledScore, Split,
};
use tilescan_core::geo::{enumerate_tiles, project, tile_centroid, unproject, BoundingRegion, GeoPoint, ProjectedPoint, TileIndex, TILE_SIDE_M};
use tilescan_core::io_util::{read_json, write_json};
use tilescan_core::par::Execution;
use tilescan_core::pipeline::export::{
    read_detections_json, write_detections_csv, write_detections_geojson, write_detections_json, write_geojson,
};
use tilescan_core::pipeline::{
    deploy_from_scores, run_deployment, score_source, Adjacency, DeployConfig, Deployment, ExclusionZone,
    OperatingPoint, TileSource,
};
use tilescan_core::scoring::protocol::{read_manifest, read_scores, write_scores, MANIFEST_FILE};
use tilescan_core::scoring::{HeuristicScorer, TileImage};
use tilescan_core::store::{read_events, read_verified_geojson, verified_geojson, StatusCounts, Store};
use tilescan_core::synthworld::{open_tile_source, write_world, SyntheticWorld, SyntheticWorldSpec, WORLD_FILE};
use tilescan_core::Error;
use tilescan_service::{router, serve_router, ApiConfig, AppState};

use crate::{DetectArgs, GridArgs, MatchArgs, MetricsArgs, ReportArgs, ScoreArgs, SelectThresholdArgs, ServeArgs, SynthArgs};

const DEFAULT_CENTER: (f64, f64) = (35.0, -101.0);

fn exec(workers: Option<usize>) -> Execution {
    workers.map_or(Execution::default(), Execution::with_workers)
}

fn parse_region(s: &str) -> Result<BoundingRegion> {
    s.parse::<BoundingRegion>().map_err(anyhow::Error::from).context("--region")
}

fn parse_split(s: &str) -> Result<Split> {
    serde_json::from_value(serde_json::Value::String(s.to_owned()))
        .map_err(|_| Error::Malformed(format!("unknown split {s:?} (train, validation or test)")))
        .context("--split")
}

fn missing(path: &Path, what: &str) -> Error {
    Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, what.to_owned()))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

/// A square region around a fixed center, `10·⌈√facilities⌉` tiles per side
/// (at least 20), which leaves ample room for the separation constraint.
pub fn default_region(facilities: usize) -> Result<BoundingRegion> {
    let per_side = 10 * (facilities as f64).sqrt().ceil().max(1.0) as usize;
    let half = per_side.max(20) as f64 * TILE_SIDE_M / 2.0;
    let c = project(GeoPoint::new(DEFAULT_CENTER.0, DEFAULT_CENTER.1)?)?;
    let lo = unproject(ProjectedPoint::new(c.x - half, c.y - half))?;
    let hi = unproject(ProjectedPoint::new(c.x + half, c.y + half))?;
    Ok(BoundingRegion::new(lo.lat(), lo.lon(), hi.lat(), hi.lon())?)
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let region = match &a.region {
        Some(s) => parse_region(s)?,
        None => default_region(a.facilities)?,
    };
    let spec = SyntheticWorldSpec::generate(region, a.seed, a.facilities, a.noise)?;
    let world = SyntheticWorld::new(spec)?;
    write_world(&a.out, &world, !a.skip_tiles, exec(a.workers))?;
    #[derive(Serialize)]
    struct Summary<'a> {
        world: PathBuf,
        region: &'a BoundingRegion,
        tiles: usize,
        facilities: usize,
        tiles_written: bool,
    }
    print_json(&Summary {
        world: a.out.join(WORLD_FILE),
        region: &region,
        tiles: world.tiles()?.len(),
        facilities: world.spec().facilities.len(),
        tiles_written: !a.skip_tiles,
    })
}

pub fn grid(a: GridArgs) -> Result<()> {
    let region = parse_region(&a.region)?;
    let tiles = enumerate_tiles(&region)?;
    let mut out = String::from("col,row,lat,lon\n");
    for t in &tiles {
        let c = tile_centroid(*t);
        writeln!(out, "{},{},{},{}", t.col, t.row, c.lat(), c.lon())?;
    }
    tilescan_core::io_util::ensure_parent(&a.out)?;
    std::fs::write(&a.out, out).map_err(|e| Error::io(&a.out, e))?;
    println!("{}", tiles.len());
    Ok(())
}

/// Tiles listed in a `tiles.csv` manifest, read from their named files.
struct ManifestSource {
    dir: PathBuf,
    files: BTreeMap<TileIndex, String>,
}

impl TileSource for ManifestSource {
    fn contains(&self, tile: TileIndex) -> bool {
        self.files.contains_key(&tile)
    }

    fn fetch(&self, tile: TileIndex) -> tilescan_core::Result<TileImage> {
        match self.files.get(&tile) {
            Some(f) => TileImage::load_png(&self.dir.join(f)),
            None => Err(Error::MissingTiles(vec![tile])),
        }
    }
}

fn tiles_of(dir: &Path) -> Result<(Vec<TileIndex>, Box<dyn TileSource + Send>)> {
    if dir.join(MANIFEST_FILE).is_file() {
        let files: BTreeMap<TileIndex, String> =
            read_manifest(dir)?.into_iter().map(|e| (e.tile(), e.filename)).collect();
        let tiles = files.keys().copied().collect();
        return Ok((tiles, Box::new(ManifestSource { dir: dir.to_path_buf(), files })));
    }
    let world_file = dir.join(WORLD_FILE);
    if world_file.is_file() {
        let spec = SyntheticWorldSpec::load(&world_file)?;
        let tiles = enumerate_tiles(&spec.region)?;
        return Ok((tiles, open_tile_source(dir)?));
    }
    Err(missing(dir, &format!("neither {MANIFEST_FILE} nor {WORLD_FILE} found")).into())
}

pub fn score(a: ScoreArgs) -> Result<()> {
    let (tiles, source) = tiles_of(&a.tiles)?;
    let scores = score_source(&tiles, source.as_ref(), &HeuristicScorer::default(), exec(a.workers))?;
    write_scores(&a.out, &scores)?;
    println!("{}", scores.len());
    Ok(())
}

fn write_deployment(out: &Path, run: &Deployment) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_detections_geojson(&out.join("detections.geojson"), &run.detections)?;
    write_detections_csv(&out.join("detections.csv"), &run.detections)?;
    write_detections_json(&out.join("detections.json"), &run.detections)?;
    write_json(&out.join("manifest.json"), &run.manifest)?;
    Ok(())
}

pub fn detect(a: DetectArgs) -> Result<()> {
    let op = OperatingPoint::new(a.threshold).context("--threshold")?;
    let adjacency: Adjacency = a.adjacency.parse().map_err(anyhow::Error::from).context("--adjacency")?;
    let zones: Vec<ExclusionZone> = match &a.exclusions {
        Some(p) => read_json(p)?,
        None => Vec::new(),
    };
    let region = a.region.as_deref().map(parse_region).transpose()?;
    let (run, out) = match (&a.world, &a.scores) {
        (Some(world), _) => {
            if !world.exists() {
                return Err(missing(world, "world directory not found").into());
            }
            let region = match region {
                Some(r) => r,
                None => {
                    let world_file = world.join(WORLD_FILE);
                    if !world_file.is_file() {
                        bail!(Error::Domain(format!(
                            "{} is not a synthetic world; pass --region",
                            world.display()
                        )));
                    }
                    SyntheticWorldSpec::load(&world_file)?.region
                }
            };
            let source = open_tile_source(world)?;
            let config = DeployConfig {
                adjacency,
                exec: exec(a.workers),
            };
            let run = run_deployment(&region, source.as_ref(), &HeuristicScorer::default(), op, &zones, config)?;
            (run, a.out.clone().unwrap_or_else(|| world.join("detections")))
        }
        (None, Some(scores)) => {
            let region = region.expect("clap requires --region with --scores");
            let run = deploy_from_scores(&region, &read_scores(scores)?, op, &zones, adjacency)?;
            (run, a.out.clone().expect("clap requires --out with --scores"))
        }
        (None, None) => unreachable!("clap requires --world or --scores"),
    };
    write_deployment(&out, &run)?;
    #[derive(Serialize)]
    struct Summary {
        detections: usize,
        positive_tiles: usize,
        tiles: usize,
        out: PathBuf,
    }
    print_json(&Summary {
        detections: run.detections.len(),
        positive_tiles: run.manifest.positive_count,
        tiles: run.manifest.tile_count,
        out,
    })
}

fn load_split(path: &Path, split: Option<&str>) -> Result<Vec<LabeledScore>> {
    let scores = read_labeled_scores(path)?;
    Ok(match split.map(parse_split).transpose()? {
        Some(s) => scores.into_iter().filter(|r| r.split == s).collect(),
        None => scores,
    })
}

pub fn metrics(a: MetricsArgs) -> Result<()> {
    let op = OperatingPoint::new(a.threshold).context("--threshold")?;
    let scores = load_split(&a.scores, a.split.as_deref())?;
    let report = compute_metrics(confusion(&scores, op.threshold()))?;
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    print_json(&report)
}

pub fn select_threshold(a: SelectThresholdArgs) -> Result<()> {
    let scores = load_split(&a.scores, Some(&a.split))?;
    let choice = select_operating_point(&scores)?;
    if let Some(out) = &a.out {
        write_json(out, &choice)?;
    }
    print_json(&choice)
}

fn load_records(paths: &[PathBuf]) -> Result<Vec<tilescan_core::benchmark::FacilityRecord>> {
    let mut records = Vec::new();
    for p in paths {
        records.extend(read_records(p).with_context(|| format!("dataset {}", p.display()))?);
    }
    Ok(records)
}

fn load_training(path: Option<&Path>) -> Result<Vec<GeoPoint>> {
    Ok(match path {
        Some(p) => read_locations(p)?,
        None => Vec::new(),
    })
}

fn write_comparison(out: &Path, cmp: &Comparison) -> Result<()> {
    write_json(&out.join("combined.json"), &cmp.combined)?;
    write_json(&out.join("coverage.json"), &cmp.coverage)?;
    write_json(&out.join("new_detections.json"), &cmp.new_detections)?;
    write_json(&out.join("table1.json"), &cmp.table)?;
    let csv_path = out.join("table1.csv");
    std::fs::write(&csv_path, cmp.table.to_csv()?).map_err(|e| Error::io(&csv_path, e))?;
    Ok(())
}

pub fn match_datasets(a: MatchArgs) -> Result<()> {
    let records = load_records(&a.datasets)?;
    let detected = read_verified_geojson(&a.detections)?;
    let training = load_training(a.training.as_deref())?;
    let cmp = compare(dedup(records, DEDUP_RADIUS_KM)?, &detected, &training);
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_comparison(&a.out, &cmp)?;
    print!("{}", cmp.table.to_csv()?);
    Ok(())
}

pub fn report(a: ReportArgs) -> Result<()> {
    if !a.log.is_file() {
        return Err(missing(&a.log, "review log not found").into());
    }
    let store = Store::replay(read_detections_json(&a.detections)?, &read_events(&a.log)?)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_geojson(&a.out.join("verified.geojson"), &verified_geojson(&store.verified_facilities()))?;
    #[derive(Serialize)]
    struct Summary {
        status: StatusCounts,
        confirmed_by_type: BTreeMap<tilescan_core::benchmark::FacilityType, usize>,
    }
    let summary = Summary {
        status: store.status_counts(),
        confirmed_by_type: store.confirmed_by_type(),
    };
    write_json(&a.out.join("review_summary.json"), &summary)?;
    if !a.datasets.is_empty() {
        let records = load_records(&a.datasets)?;
        let training = load_training(a.training.as_deref())?;
        let cmp = compare(dedup(records, DEDUP_RADIUS_KM)?, &store.detected_facilities(), &training);
        write_comparison(&a.out, &cmp)?;
    }
    print_json(&summary)
}

pub fn serve(a: ServeArgs) -> Result<()> {
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| Error::Domain(format!("--host/--port: {e}")))?;
    let config = ApiConfig {
        addr,
        log: a.log,
        detections: a.detections,
        tiles: a.tiles,
        feature_maps: a.featuremaps,
        weights: a.weights,
        datasets: a.datasets,
        training: a.training,
        ui: a.ui,
    };
    let state = AppState::from_config(&config)?;
    let app = router(Arc::new(state), config.ui.as_deref());
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(serve_router(addr, app))?;
    Ok(())
}
