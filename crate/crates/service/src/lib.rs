//! HTTP API over the review store: detection listing and inspection, tile and
//! CAM rasters, review submission and the benchmark comparison report.

mod api;
mod error;
mod schema;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::Router;
use tilescan_core::benchmark::{dedup, read_locations, read_records, CombinedDataset, DEDUP_RADIUS_KM};
use tilescan_core::geo::GeoPoint;
use tilescan_core::pipeline::export::read_detections_json;
use tilescan_core::pipeline::TileSource;
use tilescan_core::scoring::protocol::read_weights;
use tilescan_core::scoring::ClassifierWeights;
use tilescan_core::store::Store;
use tilescan_core::synthworld::open_tile_source;
use tilescan_core::{Error, Result};
use tower_http::services::ServeDir;

pub use api::{DetectionPage, ReviewRequest, DEFAULT_PAGE_SIZE, MAX_PAGE_SIZE};
pub use error::ApiError;
pub use schema::openapi_document;

/// Startup configuration. Every referenced path must exist, except the
/// review log, which is created on first use.
#[derive(Debug, Clone)]
pub struct ApiConfig {
    pub addr: SocketAddr,
    pub log: PathBuf,
    pub detections: PathBuf,
    pub tiles: Option<PathBuf>,
    pub feature_maps: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub datasets: Vec<PathBuf>,
    pub training: Option<PathBuf>,
    pub ui: Option<PathBuf>,
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "configured path does not exist"),
        ))
    }
}

impl ApiConfig {
    pub fn validate(&self) -> Result<()> {
        require(&self.detections)?;
        if let Some(parent) = self.log.parent().filter(|p| !p.as_os_str().is_empty()) {
            require(parent)?;
        }
        let optional = [&self.tiles, &self.feature_maps, &self.weights, &self.training, &self.ui];
        for p in optional.into_iter().flatten().chain(&self.datasets) {
            require(p)?;
        }
        Ok(())
    }
}

/// Feature maps plus classifier weights for server-side CAM rendering.
#[derive(Debug, Clone)]
pub struct CamInputs {
    pub feature_maps: PathBuf,
    pub weights: ClassifierWeights,
}

/// Deduplicated benchmark datasets and training locations for the report.
#[derive(Debug, Clone)]
pub struct BenchmarkInputs {
    pub combined: CombinedDataset,
    pub training_locations: Vec<GeoPoint>,
}

pub struct AppState {
    store: RwLock<Store>,
    imagery: Option<Box<dyn TileSource + Send>>,
    cam: Option<CamInputs>,
    benchmark: Option<BenchmarkInputs>,
}

impl AppState {
    pub fn new(store: Store) -> Self {
        AppState {
            store: RwLock::new(store),
            imagery: None,
            cam: None,
            benchmark: None,
        }
    }

    pub fn with_imagery(mut self, source: Box<dyn TileSource + Send>) -> Self {
        self.imagery = Some(source);
        self
    }

    pub fn with_cam(mut self, cam: CamInputs) -> Self {
        self.cam = Some(cam);
        self
    }

    pub fn with_benchmark(mut self, benchmark: BenchmarkInputs) -> Self {
        self.benchmark = Some(benchmark);
        self
    }

    /// Loads detections, replays the review log and opens every configured input.
    pub fn from_config(config: &ApiConfig) -> Result<Self> {
        config.validate()?;
        let detections = read_detections_json(&config.detections)?;
        let mut state = AppState::new(Store::open(&config.log, detections)?);
        if let Some(dir) = &config.tiles {
            state = state.with_imagery(open_tile_source(dir)?);
        }
        if let (Some(dir), Some(weights)) = (&config.feature_maps, &config.weights) {
            state = state.with_cam(CamInputs {
                feature_maps: dir.clone(),
                weights: read_weights(weights)?,
            });
        }
        if !config.datasets.is_empty() {
            let mut records = Vec::new();
            for path in &config.datasets {
                records.extend(read_records(path)?);
            }
            let training_locations = match &config.training {
                Some(p) => read_locations(p)?,
                None => Vec::new(),
            };
            state = state.with_benchmark(BenchmarkInputs {
                combined: dedup(records, DEDUP_RADIUS_KM)?,
                training_locations,
            });
        }
        Ok(state)
    }

    /// Read access to the store, e.g. for inspection after requests.
    pub fn store(&self) -> std::sync::RwLockReadGuard<'_, Store> {
        self.store.read().unwrap_or_else(|e| e.into_inner())
    }
}

/// The API routes, plus the static UI (if any) as fallback.
pub fn router(state: Arc<AppState>, ui: Option<&Path>) -> Router {
    let app = api::routes().with_state(state);
    match ui {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

/// Binds `addr` and serves `app` until the process is stopped.
pub async fn serve_router(addr: SocketAddr, app: Router) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app).await
}
