//! Tile-grid detection of oil and gas infrastructure.
//!
//! A region is cut into fixed-size Web Mercator tiles, each tile is scored by a
//! [`scoring::TileScorer`], positive tiles are merged into [`pipeline::Detection`]s
//! and the detections are compared against public facility datasets
//! ([`benchmark`]) and curated by reviewers ([`store`]).

pub mod benchmark;
pub mod error;
pub mod evaluation;
pub mod fixtures;
pub mod geo;
pub mod io_util;
pub mod par;
pub mod pipeline;
pub mod scoring;
pub mod store;
pub mod synthworld;

pub use error::{Error, Result};
