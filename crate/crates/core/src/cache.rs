//! Trajectory cache files.
//!
//! Layout: magic `PESN`, version `u32`, dimension `d` as `u32`, point count
//! `n` as `u64`, then `n·d` row-major `f64`, all little-endian.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{PesinError, Result};

pub const MAGIC: &[u8; 4] = b"PESN";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dim: usize,
    /// Row-major `n × dim`.
    pub data: Vec<f64>,
}

impl Trajectory {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 && !data.is_empty() {
            return Err(PesinError::InvalidInput("zero-dimensional trajectory with data".into()));
        }
        if dim > 0 && !data.len().is_multiple_of(dim) {
            return Err(PesinError::Dimension(format!(
                "{} values do not split into points of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_points(dim: usize, points: &[crate::linalg::Vector]) -> Result<Self> {
        if points.iter().any(|p| p.len() != dim) {
            return Err(PesinError::Dimension("trajectory points differ in dimension".into()));
        }
        Self::new(dim, points.iter().flat_map(|p| p.iter().copied()).collect())
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }
}

pub fn encode(t: &Trajectory) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * t.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t.dim as u32).to_le_bytes());
    out.extend_from_slice(&(t.len() as u64).to_le_bytes());
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Trajectory> {
    if bytes.len() < HEADER_LEN {
        return Err(PesinError::Format(format!(
            "file has {} bytes, header needs {HEADER_LEN}",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(PesinError::Format("bad magic, expected PESN".into()));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = u32_at(4);
    if version != VERSION {
        return Err(PesinError::Format(format!("unsupported version {version}")));
    }
    let dim = u32_at(8) as usize;
    let n = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let expected = (n as u128) * (dim as u128) * 8 + HEADER_LEN as u128;
    if expected != bytes.len() as u128 {
        return Err(PesinError::Format(format!(
            "payload holds {} bytes, header announces {}",
            bytes.len() - HEADER_LEN,
            expected - HEADER_LEN as u128
        )));
    }
    if dim == 0 && n > 0 {
        return Err(PesinError::Format("points of dimension 0".into()));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Trajectory::new(dim, data)
}

pub fn write_trajectory(path: &Path, t: &Trajectory) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(t))?;
    f.flush()?;
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_trajectory_round_trips() {
        let t = Trajectory::new(3, vec![]).unwrap();
        let back = decode(&encode(&t)).unwrap();
        assert_eq!(back, t);
        assert_eq!(encode(&t).len(), HEADER_LEN);
    }

    #[test]
    fn small_trajectory_round_trips_bitwise() {
        let t = Trajectory::new(2, vec![0.1, -2.5, f64::MIN_POSITIVE, 1e300, -0.0, 7.0]).unwrap();
        let back = decode(&encode(&t)).unwrap();
        assert_eq!(back.len(), 3);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.data), bits(&t.data));
    }

    #[test]
    fn corrupt_files_are_format_errors() {
        let bytes = encode(&Trajectory::new(2, vec![1.0, 2.0]).unwrap());
        assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(PesinError::Format(_))));
        assert!(matches!(decode(&bytes[..7]), Err(PesinError::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(PesinError::Format(_))));
        let mut bad = bytes;
        bad[4] = 9;
        assert!(matches!(decode(&bad), Err(PesinError::Format(_))));
    }
}
