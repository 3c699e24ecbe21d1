//! Versioned binary checkpoint.
//!
//! Layout (all little-endian): 8-byte magic `PLLIFTCK`, `u32` version,
//! `u32` joints, `u32` width, `u32` blocks, then `f64` dropout rate,
//! batch-norm momentum, output scale, image width, image height and depth
//! scale, then `u64` parameter count, `u64` running-statistic count, and the
//! two `f64` arrays.

use std::path::Path;

use super::network::{Architecture, InputNorm, LiftingNetwork};
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PLLIFTCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn to_bytes(net: &LiftingNetwork) -> Vec<u8> {
    let mut out = Vec::with_capacity(96 + 8 * (net.params.len() + net.running.len()));
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for v in [CHECKPOINT_VERSION, net.arch.n_joints as u32, net.arch.width as u32, net.arch.blocks as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in [
        net.dropout_rate,
        net.bn_momentum,
        net.output_scale,
        net.norm.image_width,
        net.norm.image_height,
        net.norm.depth_scale,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(net.params.len() as u64).to_le_bytes());
    out.extend_from_slice(&(net.running.len() as u64).to_le_bytes());
    for v in net.params.iter().chain(&net.running) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("bad length".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<LiftingNetwork> {
    let mut r = Reader { buf, at: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a lifting checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let arch = Architecture {
        n_joints: r.u32()? as usize,
        width: r.u32()? as usize,
        blocks: r.u32()? as usize,
    };
    let dropout_rate = r.f64()?;
    let bn_momentum = r.f64()?;
    let output_scale = r.f64()?;
    let norm = InputNorm {
        image_width: r.f64()?,
        image_height: r.f64()?,
        depth_scale: r.f64()?,
    };
    let n_params = r.u64()? as usize;
    let n_running = r.u64()? as usize;
    let params = r.f64s(n_params)?;
    let running = r.f64s(n_running)?;
    if r.at != buf.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    let mut net = LiftingNetwork::from_parts(arch, norm, params, running)?;
    net.dropout_rate = dropout_rate;
    net.bn_momentum = bn_momentum;
    net.output_scale = output_scale;
    Ok(net)
}

pub fn save(net: &LiftingNetwork, path: &Path) -> Result<()> {
    write_atomic(path, &to_bytes(net))
}

pub fn load(path: &Path) -> Result<LiftingNetwork> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf)
}
