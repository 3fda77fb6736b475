//! Feature cache: `EFM1`, u32 rows, u32 cols, u32 config hash, then `rows * cols`
//! little-endian f32 values, row-major.

use std::path::Path;

use super::{FeatureConfig, FeatureMatrix};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const CACHE_MAGIC: &[u8; 4] = b"EFM1";

pub fn encode(m: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * m.rows() * m.cols());
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    out.extend_from_slice(&m.config.hash().to_le_bytes());
    for &v in m.values.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Decodes a cache, returning the stored hash and the values widened to f64.
pub fn decode(bytes: &[u8]) -> Result<(u32, Matrix)> {
    if bytes.len() < 16 || &bytes[..4] != CACHE_MAGIC {
        return Err(Error::Format("not an EFM1 feature cache".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    let (rows, cols, hash) = (word(1) as usize, word(2) as usize, word(3));
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(16))
        .ok_or_else(|| Error::Format("feature cache size overflows".into()))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "feature cache holds {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok((hash, Matrix::from_vec(rows, cols, data)?))
}

pub fn write_cache(path: &Path, m: &FeatureMatrix) -> Result<()> {
    crate::io::write_atomic(path, &encode(m))
}

/// Reads a cache written under `cfg`; a hash mismatch is a configuration error.
pub fn read_cache(path: &Path, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    let (hash, values) = decode(&std::fs::read(path)?)?;
    if hash != cfg.hash() {
        return Err(Error::Config(format!(
            "feature cache {} was written with config hash {hash:08x}, current is {:08x}",
            path.display(),
            cfg.hash()
        )));
    }
    if values.cols() != cfg.dim() {
        return Err(Error::Shape(format!(
            "cache has {} columns, config implies {}",
            values.cols(),
            cfg.dim()
        )));
    }
    let frame_times = (0..values.rows()).map(|i| cfg.frame_time(i)).collect();
    Ok(FeatureMatrix {
        values,
        config: cfg.clone(),
        frame_times,
    })
}

/// Reads a cache without checking it against a configuration.
pub fn read_cache_unchecked(path: &Path) -> Result<(u32, Matrix)> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_round_trip_exactly() {
        let cfg = FeatureConfig::default();
        let values = Matrix::from_vec(
            3,
            31,
            (0..93).map(|v| (v as f32 * 0.37 - 4.0) as f64).collect(),
        )
        .unwrap();
        let m = FeatureMatrix {
            values,
            config: cfg.clone(),
            frame_times: (0..3).map(|i| cfg.frame_time(i)).collect(),
        };
        let bytes = encode(&m);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.efm");
        std::fs::write(&path, &bytes).unwrap();
        let back = read_cache(&path, &cfg).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn corrupt_or_mismatched() {
        let cfg = FeatureConfig::default();
        let m = FeatureMatrix {
            values: Matrix::zeros(2, 31),
            config: cfg.clone(),
            frame_times: vec![0.0, 0.01],
        };
        let bytes = encode(&m);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode(b"EFM0aaaaaaaaaaaa").is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.efm");
        std::fs::write(&path, &bytes).unwrap();
        let other = FeatureConfig { n_mel: 64, ..cfg };
        assert!(matches!(read_cache(&path, &other), Err(Error::Config(_))));
    }
}
