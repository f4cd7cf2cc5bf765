//! Feature cache: `"VQFT"`, version `u32`, rows `u64`, cols `u64`,
//! hop_ms `f64`, frame_len_ms `f64`, then row-major `f64` values.

use std::path::Path;

use super::FeatureMatrix;
use crate::error::Result;
use crate::persist::{read_file, BinReader, BinWriter};

pub const FEATURE_MAGIC: &[u8; 4] = b"VQFT";

pub fn write_feature_cache(path: &Path, feat: &FeatureMatrix, frame_len_ms: f64) -> Result<()> {
    let mut w = BinWriter::new(FEATURE_MAGIC);
    w.u64(feat.n_frames() as u64)
        .u64(feat.dim() as u64)
        .f64(feat.hop_s() * 1000.0)
        .f64(frame_len_ms)
        .f64s(feat.values());
    w.write_to(path)
}

/// Returns the matrix and the stored frame length in milliseconds.
pub fn read_feature_cache(path: &Path) -> Result<(FeatureMatrix, f64)> {
    let bytes = read_file(path)?;
    let mut r = BinReader::new(&bytes, FEATURE_MAGIC, "feature cache")?;
    let rows = r.usize()?;
    let cols = r.usize()?;
    let hop_ms = r.f64()?;
    let frame_len_ms = r.f64()?;
    let values = r.f64s(rows * cols)?;
    r.finish()?;
    Ok((FeatureMatrix::new(rows, cols, values, 0.0, hop_ms / 1000.0)?, frame_len_ms))
}
