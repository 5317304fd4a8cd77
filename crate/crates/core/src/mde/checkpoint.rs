//! `"D4DM"`, u32 version, three u32 channel widths, u32 working width and
//! height, f32 max depth, u64 training seed, u64 parameter count and the
//! little-endian f32 parameter blob.

use std::fs;
use std::path::Path;

use crate::binio::{write_atomic, Reader};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{MdeConfig, MdeNet};

pub const MDE_MAGIC: &[u8; 4] = b"D4DM";
pub const MDE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct MdeCheckpoint {
    pub config: MdeConfig,
    /// Resolution the network was trained at.
    pub working: (usize, usize),
    pub max_depth_m: f32,
    pub seed: u64,
    pub params: Vec<f32>,
}

impl MdeCheckpoint {
    pub fn from_model<S: Scalar>(net: &MdeNet<S>, working: (usize, usize), max_depth_m: f32, seed: u64) -> Self {
        MdeCheckpoint { config: *net.config(), working, max_depth_m, seed, params: net.params().to_flat() }
    }

    pub fn model<S: Scalar>(&self) -> Result<MdeNet<S>> {
        let mut net = MdeNet::new(self.config, 0);
        net.params_mut().load_flat(&self.params)?;
        Ok(net)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(48 + 4 * self.params.len());
        out.extend_from_slice(MDE_MAGIC);
        out.extend_from_slice(&MDE_VERSION.to_le_bytes());
        for v in [self.config.widths[0], self.config.widths[1], self.config.widths[2], self.working.0, self.working.1] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.max_depth_m.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let magic = r.take(4, "magic")?;
        if magic != MDE_MAGIC {
            return Err(Error::format(0, format!("bad depth checkpoint magic {magic:?}")));
        }
        let version = r.u32("version")?;
        if version != MDE_VERSION {
            return Err(Error::format(4, format!("unsupported depth checkpoint version {version}")));
        }
        let widths = [r.u32("width 0")? as usize, r.u32("width 1")? as usize, r.u32("width 2")? as usize];
        let working = (r.u32("working width")? as usize, r.u32("working height")? as usize);
        let max_depth_m = r.f32("max depth")?;
        let seed = r.u64("seed")?;
        let n_at = r.pos() as u64;
        let n = r.u64("parameter count")? as usize;
        if n.checked_mul(4).is_none_or(|b| b > r.remaining()) {
            return Err(Error::format(n_at, format!("parameter count {n} exceeds file size")));
        }
        let params = (0..n).map(|_| r.f32("parameter")).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        let config = MdeConfig { widths };
        if widths.contains(&0) || MdeNet::<f32>::new(config, 0).param_count() != n {
            return Err(Error::format(n_at, "parameter count does not match architecture"));
        }
        Ok(MdeCheckpoint { config, working, max_depth_m, seed, params })
    }
}

pub fn write_mde_checkpoint(ck: &MdeCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &ck.encode())
}

pub fn read_mde_checkpoint(path: impl AsRef<Path>) -> Result<MdeCheckpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    MdeCheckpoint::decode(&bytes)
}
