//! The `tilescan` command line: one subcommand per pipeline stage.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use commands::default_region;

/// Input file or directory missing.
pub const EXIT_NO_INPUT: u8 = 66;
/// Input present but invalid (bad values, malformed files, failed checks).
pub const EXIT_DATA_ERR: u8 = 65;
/// Any other failure.
pub const EXIT_FAILURE: u8 = 1;

#[derive(Debug, Parser)]
#[command(name = "tilescan", version, about = "Tile-grid facility detection pipeline")]
pub struct Cli {
    /// JSON file of per-subcommand flag defaults; flags on the command line win
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic world with planted facilities
    Synth(SynthArgs),
    /// List the tiles covering a region
    Grid(GridArgs),
    /// Score tiles with the built-in heuristic scorer
    Score(ScoreArgs),
    /// Threshold, merge and filter tile scores into detections
    Detect(DetectArgs),
    /// Accuracy, precision, recall and F1 of labeled scores at a threshold
    Metrics(MetricsArgs),
    /// Pick the operating point with recall 1.0 and maximal precision
    SelectThreshold(SelectThresholdArgs),
    /// Compare verified facilities against benchmark datasets
    Match(MatchArgs),
    /// Replay the review log and export verified facilities and statistics
    Report(ReportArgs),
    /// Run the review HTTP API
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// RNG seed; identical seeds give identical worlds
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of facilities to plant
    #[arg(long, default_value_t = 20)]
    pub facilities: usize,
    /// min_lat,min_lon,max_lat,max_lon; defaults to a square sized for the facility count
    #[arg(long)]
    pub region: Option<String>,
    /// Terrain noise amplitude in [0, 1]
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Write only world.json and ground_truth.json; tiles are rendered on demand later
    #[arg(long)]
    pub skip_tiles: bool,
    /// Worker threads for rendering (1 = sequential)
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// min_lat,min_lon,max_lat,max_lon
    #[arg(long)]
    pub region: String,
    /// Output CSV (col,row,lat,lon of each tile center)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Tile directory with tiles.csv, or a synthetic world directory
    #[arg(long)]
    pub tiles: PathBuf,
    /// Output scores.csv
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads (1 = sequential)
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Synthetic world or tile directory to render and score
    #[arg(long, conflicts_with = "scores", required_unless_present = "scores")]
    pub world: Option<PathBuf>,
    /// Precomputed scores.csv
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// min_lat,min_lon,max_lat,max_lon; defaults to the world's region
    #[arg(long, required_unless_present = "world")]
    pub region: Option<String>,
    /// Operating point; tiles scoring at least this are positive
    #[arg(long)]
    pub threshold: f64,
    /// Tile adjacency used for merging: 4 or 8
    #[arg(long, default_value = "4")]
    pub adjacency: String,
    /// JSON list of exclusion zones ({"region": {...}, "reason": "..."})
    #[arg(long)]
    pub exclusions: Option<PathBuf>,
    /// Worker threads (1 = sequential)
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory; defaults to <world>/detections
    #[arg(long, required_unless_present = "world")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Labeled scores CSV (id,split,label,probability,negative_category)
    #[arg(long)]
    pub scores: PathBuf,
    /// Decision threshold
    #[arg(long)]
    pub threshold: f64,
    /// Restrict to one split: train, validation or test
    #[arg(long)]
    pub split: Option<String>,
    /// Also write the report to this JSON file
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectThresholdArgs {
    /// Labeled scores CSV
    #[arg(long)]
    pub scores: PathBuf,
    /// Split to select on
    #[arg(long, default_value = "validation")]
    pub split: String,
    /// Also write the choice to this JSON file
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    /// Benchmark datasets (CSV or GeoJSON); repeat for several
    #[arg(long, required = true, num_args = 1..)]
    pub datasets: Vec<PathBuf>,
    /// Verified facilities GeoJSON
    #[arg(long)]
    pub detections: PathBuf,
    /// Training locations CSV (lat,lon)
    #[arg(long)]
    pub training: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Review event log (NDJSON)
    #[arg(long)]
    pub log: PathBuf,
    /// detections.json from `detect`
    #[arg(long)]
    pub detections: PathBuf,
    /// Benchmark datasets for the comparison table; repeat for several
    #[arg(long, num_args = 1..)]
    pub datasets: Vec<PathBuf>,
    /// Training locations CSV (lat,lon)
    #[arg(long)]
    pub training: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// TCP port
    #[arg(long)]
    pub port: u16,
    /// Bind address
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// detections.json from `detect`
    #[arg(long)]
    pub detections: PathBuf,
    /// Review event log (NDJSON); created if absent
    #[arg(long)]
    pub log: PathBuf,
    /// Tile directory or synthetic world for /image
    #[arg(long)]
    pub tiles: Option<PathBuf>,
    /// Directory of {col}_{row}.ogfm feature maps for /cam
    #[arg(long)]
    pub featuremaps: Option<PathBuf>,
    /// Classifier weights (.ogfw) for /cam
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Benchmark datasets for /reports/table1; repeat for several
    #[arg(long, num_args = 1..)]
    pub datasets: Vec<PathBuf>,
    /// Training locations CSV (lat,lon)
    #[arg(long)]
    pub training: Option<PathBuf>,
    /// Built review UI to serve at /
    #[arg(long)]
    pub ui: Option<PathBuf>,
}

/// Exit status for a failed command.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<tilescan_core::Error>() {
            use tilescan_core::Error as E;
            return match e {
                e if e.is_not_found() => EXIT_NO_INPUT,
                E::Io { .. } => EXIT_FAILURE,
                _ => EXIT_DATA_ERR,
            };
        }
        if let Some(e) = cause.downcast_ref::<std::io::Error>() {
            return if e.kind() == std::io::ErrorKind::NotFound {
                EXIT_NO_INPUT
            } else {
                EXIT_FAILURE
            };
        }
        if cause.is::<serde_json::Error>() {
            return EXIT_DATA_ERR;
        }
    }
    EXIT_FAILURE
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Grid(a) => commands::grid(a),
        Command::Score(a) => commands::score(a),
        Command::Detect(a) => commands::detect(a),
        Command::Metrics(a) => commands::metrics(a),
        Command::SelectThreshold(a) => commands::select_threshold(a),
        Command::Match(a) => commands::match_datasets(a),
        Command::Report(a) => commands::report(a),
        Command::Serve(a) => commands::serve(a),
    }
}

/// Parses `args` (including the program name), runs the command and maps
/// failures to exit codes with a one-line diagnostic on stderr.
pub fn main_with_args(args: Vec<OsString>) -> ExitCode {
    let args = match config::expand(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(exit_code(&e));
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
