//! File exchange with external scorers.
//!
//! A request is a directory of `{col}_{row}.png` tiles plus a `tiles.csv`
//! manifest (`col,row,filename`). The scorer answers with `scores.csv`
//! (`col,row,probability`) and may drop `{col}_{row}.ogfm` feature maps next
//! to it. Classifier weights travel as a single `.ogfw` file.
//!
//! Binary layouts, all little-endian:
//!
//! ```text
//! .ogfm  "OGFM" | C: u32 | H: u32 | W: u32 | C·H·W × f32
//! .ogfw  "OGFW" | C: u32 | C × f32
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::cam::{ClassifierWeights, FeatureMapTensor, CAM_SIZE};
use super::{TileImage, TileScore};
use crate::error::{Error, Result};
use crate::geo::TileIndex;

pub const MANIFEST_FILE: &str = "tiles.csv";
pub const SCORES_FILE: &str = "scores.csv";
pub const FEATURE_MAP_EXT: &str = "ogfm";
pub const WEIGHTS_EXT: &str = "ogfw";

const FEATURE_MAP_MAGIC: &[u8; 4] = b"OGFM";
const WEIGHTS_MAGIC: &[u8; 4] = b"OGFW";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub col: i32,
    pub row: i32,
    pub filename: String,
}

impl ManifestEntry {
    pub fn tile(&self) -> TileIndex {
        TileIndex::new(self.col, self.row)
    }
}

pub fn tile_png_name(tile: TileIndex) -> String {
    format!("{}.png", tile.file_stem())
}

pub fn feature_map_path(dir: &Path, tile: TileIndex) -> PathBuf {
    dir.join(format!("{}.{FEATURE_MAP_EXT}", tile.file_stem()))
}

/// Writes tiles and the manifest into `dir`, creating it if needed.
pub fn write_request(dir: &Path, tiles: &[(TileIndex, TileImage)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(tiles.len());
    for (tile, image) in tiles {
        let filename = tile_png_name(*tile);
        image.save_png(&dir.join(&filename))?;
        entries.push(ManifestEntry {
            col: tile.col,
            row: tile.row,
            filename,
        });
    }
    entries.sort_by_key(|e| e.tile());
    write_manifest(dir, &entries)
}

pub fn write_manifest(dir: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    for e in entries {
        w.serialize(e)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST_FILE);
    let mut r = csv::Reader::from_path(&path).map_err(|e| map_csv_open(&path, e))?;
    check_headers(&path, r.headers()?, &["col", "row", "filename"])?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

#[derive(Serialize, Deserialize)]
struct ScoreRow {
    col: i32,
    row: i32,
    probability: f64,
}

/// Writes scores with shortest round-trip decimal formatting.
pub fn write_scores(path: &Path, scores: &[TileScore]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in scores {
        w.serialize(ScoreRow {
            col: s.tile.col,
            row: s.tile.row,
            probability: s.probability,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_scores(path: &Path) -> Result<Vec<TileScore>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| map_csv_open(path, e))?;
    check_headers(path, r.headers()?, &["col", "row", "probability"])?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let row: ScoreRow = row?;
        if !(0.0..=1.0).contains(&row.probability) {
            return Err(Error::Malformed(format!(
                "{}: probability {} for tile ({}, {}) outside [0, 1]",
                path.display(),
                row.probability,
                row.col,
                row.row
            )));
        }
        out.push(TileScore {
            tile: TileIndex::new(row.col, row.row),
            probability: row.probability,
        });
    }
    out.sort_by_key(|s| s.tile);
    if let Some(w) = out.windows(2).find(|w| w[0].tile == w[1].tile) {
        return Err(Error::Malformed(format!(
            "{}: duplicate score for tile ({}, {})",
            path.display(),
            w[0].tile.col,
            w[0].tile.row
        )));
    }
    Ok(out)
}

pub fn encode_feature_map(fm: &FeatureMapTensor) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + fm.values().len() * 4);
    buf.extend_from_slice(FEATURE_MAP_MAGIC);
    for dim in [fm.channels(), CAM_SIZE, CAM_SIZE] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for v in fm.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_feature_map(bytes: &[u8]) -> Result<FeatureMapTensor> {
    let body = strip_magic(bytes, FEATURE_MAP_MAGIC)?;
    let (header, data) = split_checked(body, 12)?;
    let c = read_u32(&header[0..4]) as usize;
    let h = read_u32(&header[4..8]) as usize;
    let w = read_u32(&header[8..12]) as usize;
    if h != CAM_SIZE || w != CAM_SIZE {
        return Err(Error::Malformed(format!(
            "feature map is {h}x{w}, expected {CAM_SIZE}x{CAM_SIZE}"
        )));
    }
    let values = read_f32s(data, c * h * w)?;
    FeatureMapTensor::new(c, values)
}

pub fn encode_weights(w: &ClassifierWeights) -> Vec<u8> {
    let mut buf = Vec::with_capacity(8 + w.len() * 4);
    buf.extend_from_slice(WEIGHTS_MAGIC);
    buf.extend_from_slice(&(w.len() as u32).to_le_bytes());
    for v in &w.0 {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_weights(bytes: &[u8]) -> Result<ClassifierWeights> {
    let body = strip_magic(bytes, WEIGHTS_MAGIC)?;
    let (header, data) = split_checked(body, 4)?;
    let c = read_u32(header) as usize;
    Ok(ClassifierWeights(read_f32s(data, c)?))
}

pub fn write_feature_map(path: &Path, fm: &FeatureMapTensor) -> Result<()> {
    fs::write(path, encode_feature_map(fm)).map_err(|e| Error::io(path, e))
}

pub fn read_feature_map(path: &Path) -> Result<FeatureMapTensor> {
    decode_feature_map(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_weights(path: &Path, w: &ClassifierWeights) -> Result<()> {
    fs::write(path, encode_weights(w)).map_err(|e| Error::io(path, e))
}

pub fn read_weights(path: &Path) -> Result<ClassifierWeights> {
    decode_weights(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

fn strip_magic<'a>(bytes: &'a [u8], magic: &[u8; 4]) -> Result<&'a [u8]> {
    match bytes.strip_prefix(magic.as_slice()) {
        Some(rest) => Ok(rest),
        None => Err(Error::Malformed(format!(
            "bad magic, expected {}",
            String::from_utf8_lossy(magic)
        ))),
    }
}

fn split_checked(bytes: &[u8], at: usize) -> Result<(&[u8], &[u8])> {
    if bytes.len() < at {
        return Err(Error::Malformed("truncated header".into()));
    }
    Ok(bytes.split_at(at))
}

fn read_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes(b.try_into().expect("4-byte slice"))
}

fn read_f32s(data: &[u8], count: usize) -> Result<Vec<f32>> {
    if data.len() != count * 4 {
        return Err(Error::Malformed(format!(
            "expected {count} floats ({} bytes), found {} bytes",
            count * 4,
            data.len()
        )));
    }
    Ok(data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect())
}

fn check_headers(path: &Path, headers: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    if headers.iter().ne(expected.iter().copied()) {
        return Err(Error::Malformed(format!(
            "{}: header {:?}, expected {}",
            path.display(),
            headers.iter().collect::<Vec<_>>(),
            expected.join(",")
        )));
    }
    Ok(())
}

pub(crate) fn map_csv_open(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Malformed(format!("{}: {other:?}", path.display())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn feature_map_layout_is_bit_exact() {
        let mut values = vec![0f32; 2 * 225];
        values[0] = 1.0;
        values[225] = -2.5;
        let fm = FeatureMapTensor::new(2, values).unwrap();
        let bytes = encode_feature_map(&fm);
        assert_eq!(&bytes[..4], b"OGFM");
        assert_eq!(&bytes[4..16], &[2, 0, 0, 0, 15, 0, 0, 0, 15, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &1f32.to_le_bytes());
        // channel 1 starts after 225 floats of channel 0
        assert_eq!(&bytes[16 + 900..16 + 904], &(-2.5f32).to_le_bytes());
        assert_eq!(bytes.len(), 16 + 2 * 225 * 4);
        assert_eq!(decode_feature_map(&bytes).unwrap(), fm);
    }

    #[test]
    fn weights_layout_is_bit_exact() {
        let w = ClassifierWeights(vec![0.5, -1.0, 3.0]);
        let bytes = encode_weights(&w);
        assert_eq!(&bytes[..8], &[b'O', b'G', b'F', b'W', 3, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &0.5f32.to_le_bytes());
        assert_eq!(decode_weights(&bytes).unwrap(), w);
    }

    #[test]
    fn malformed_binaries() {
        assert!(decode_weights(b"OGFM\x01\0\0\0\0\0\0\0").is_err());
        assert!(decode_weights(b"OGFW\x02\0\0\0\0\0\0\0").is_err());
        assert!(decode_weights(b"OGF").is_err());
        let mut fm = encode_feature_map(&FeatureMapTensor::new(1, vec![0.0; 225]).unwrap());
        fm[12] = 14;
        assert!(decode_feature_map(&fm).unwrap_err().to_string().contains("15x14"));
        assert!(decode_feature_map(&fm[..20]).is_err());
    }

    #[test]
    fn scores_csv_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(SCORES_FILE);
        let scores = vec![
            TileScore { tile: TileIndex::new(-3, 7), probability: 0.1 + 0.2 },
            TileScore { tile: TileIndex::new(4, 7), probability: 1.0 / 3.0 },
        ];
        write_scores(&path, &scores).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "col,row,probability\n-3,7,0.30000000000000004\n4,7,0.3333333333333333\n"
        );
        assert_eq!(read_scores(&path).unwrap(), scores);

        fs::write(&path, "col,row,probability\n1,1,0.5\n1,1,0.6\n").unwrap();
        assert!(read_scores(&path).unwrap_err().to_string().contains("duplicate"));
        fs::write(&path, "col,row,prob\n1,1,0.5\n").unwrap();
        assert!(read_scores(&path).is_err());
        fs::write(&path, "col,row,probability\n1,1,1.5\n").unwrap();
        assert!(read_scores(&path).is_err());
        assert!(read_scores(&dir.path().join("nope.csv")).unwrap_err().is_not_found());
    }

    #[test]
    fn request_directory() {
        let dir = tempfile::tempdir().unwrap();
        let tiles = vec![
            (TileIndex::new(2, 1), TileImage::filled([0, 0, 0])),
            (TileIndex::new(-1, 0), TileImage::filled([255, 255, 255])),
        ];
        write_request(dir.path(), &tiles).unwrap();
        let manifest = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(manifest, "col,row,filename\n-1,0,-1_0.png\n2,1,2_1.png\n");
        let entries = read_manifest(dir.path()).unwrap();
        assert_eq!(entries[1].tile(), TileIndex::new(2, 1));
        let img = TileImage::load_png(&dir.path().join(&entries[0].filename)).unwrap();
        assert_eq!(img, tiles[1].1);
    }

    proptest! {
        #[test]
        fn feature_map_roundtrip(c in 1usize..5, v in proptest::collection::vec(any::<f32>().prop_filter("finite", |x| x.is_finite()), 5 * 225)) {
            let fm = FeatureMapTensor::new(c, v[..c * 225].to_vec()).unwrap();
            prop_assert_eq!(decode_feature_map(&encode_feature_map(&fm)).unwrap(), fm);
        }
    }
}
