//! Binary tensor container: magic `PLTENSR1`, `u32` rank, `u64` dims, then
//! row-major `f32` payload, all little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const TENSOR_MAGIC: &[u8; 8] = b"PLTENSR1";
pub const MAX_RANK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorFile {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.len() > MAX_RANK {
            return Err(Error::Format(format!("rank {} exceeds {MAX_RANK}", dims.len())));
        }
        let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        if n != Some(data.len()) {
            return Err(Error::dim(format!("{dims:?}"), data.len()));
        }
        Ok(TensorFile { dims, data })
    }

    /// Narrows to `f32` on the way to disk.
    pub fn from_f64(dims: Vec<usize>, data: &[f64]) -> Result<Self> {
        TensorFile::new(dims, data.iter().map(|&v| v as f32).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(TENSOR_MAGIC);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < 12 || &buf[..8] != TENSOR_MAGIC {
            return Err(Error::Format("not a tensor file (bad magic)".into()));
        }
        let rank = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        if rank > MAX_RANK {
            return Err(Error::Format(format!("rank {rank} exceeds {MAX_RANK}")));
        }
        let header = 12 + 8 * rank;
        if buf.len() < header {
            return Err(Error::Format("tensor header truncated".into()));
        }
        let dims: Vec<usize> = buf[12..header]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let payload = &buf[header..];
        if n.and_then(|n| n.checked_mul(4)) != Some(payload.len()) {
            return Err(Error::Format(format!("payload of {} bytes does not match dims {dims:?}", payload.len())));
        }
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(TensorFile { dims, data })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        TensorFile::from_bytes(&buf)
    }
}
