//! Versioned binary checkpoint.
//!
//! `"D4DC"`, u32 version, then the configuration (loss u8, schedule u8,
//! variance u8, pad u8, steps u32, two f64 schedule parameters, width u32,
//! height u32, three u32 channel widths, time-embedding u32, max depth f32),
//! a u64 parameter count with the little-endian f32 parameter blob, and
//! finally the u64 seed.

use std::fs;
use std::path::Path;

use crate::denoiser::{DenoiserConfig, DenoiserNet};
use crate::error::{Error, Result};
use crate::ndgrad::LossKind;
use crate::binio::{write_atomic, Reader};
use crate::scalar::Scalar;
use crate::schedules::ScheduleSpec;

use super::{DiffusionConfig, VarianceKind};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"D4DC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionCheckpoint {
    pub config: DiffusionConfig,
    pub denoiser: DenoiserConfig,
    /// Physical depth scale of the training data; stamped on generated sets.
    pub max_depth_m: f32,
    pub params: Vec<f32>,
}

impl DiffusionCheckpoint {
    pub fn from_model<S: Scalar>(config: DiffusionConfig, net: &DenoiserNet<S>, max_depth_m: f32) -> Self {
        DiffusionCheckpoint { config, denoiser: *net.config(), max_depth_m, params: net.params().to_flat() }
    }

    pub fn model<S: Scalar>(&self) -> Result<DenoiserNet<S>> {
        let mut net = DenoiserNet::new(self.denoiser, 0);
        net.params_mut().load_flat(&self.params)?;
        Ok(net)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(96 + 4 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(match self.config.loss {
            LossKind::L1 => 0,
            LossKind::L2 => 1,
        });
        let (kind, p1, p2) = match self.config.schedule {
            ScheduleSpec::Linear { beta_start, beta_end, .. } => (0u8, beta_start, beta_end),
            ScheduleSpec::Cosine { offset, beta_clip, .. } => (1u8, offset, beta_clip),
        };
        out.push(kind);
        out.push(match self.config.variance {
            VarianceKind::Posterior => 0,
            VarianceKind::Beta => 1,
        });
        out.push(0);
        out.extend_from_slice(&(self.config.steps() as u32).to_le_bytes());
        out.extend_from_slice(&p1.to_le_bytes());
        out.extend_from_slice(&p2.to_le_bytes());
        for v in [
            self.config.resolution.0,
            self.config.resolution.1,
            self.denoiser.widths[0],
            self.denoiser.widths[1],
            self.denoiser.widths[2],
            self.denoiser.time_dim,
        ] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.max_depth_m.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out.extend_from_slice(&self.config.seed.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let magic = r.take(4, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Format { offset: 0, reason: format!("bad checkpoint magic {magic:?}") });
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format { offset: 4, reason: format!("unsupported checkpoint version {version}") });
        }
        let at = r.pos() as u64;
        let loss = match r.u8("loss kind")? {
            0 => LossKind::L1,
            1 => LossKind::L2,
            other => return Err(Error::Format { offset: at, reason: format!("unknown loss kind {other}") }),
        };
        let kind_at = r.pos() as u64;
        let kind = r.u8("schedule kind")?;
        let var_at = r.pos() as u64;
        let variance = match r.u8("variance kind")? {
            0 => VarianceKind::Posterior,
            1 => VarianceKind::Beta,
            other => return Err(Error::Format { offset: var_at, reason: format!("unknown variance kind {other}") }),
        };
        r.u8("padding")?;
        let steps = r.u32("steps")? as usize;
        let (p1, p2) = (r.f64("schedule parameter")?, r.f64("schedule parameter")?);
        let schedule = match kind {
            0 => ScheduleSpec::Linear { steps, beta_start: p1, beta_end: p2 },
            1 => ScheduleSpec::Cosine { steps, offset: p1, beta_clip: p2 },
            other => return Err(Error::Format { offset: kind_at, reason: format!("unknown schedule kind {other}") }),
        };
        let width = r.u32("width")? as usize;
        let height = r.u32("height")? as usize;
        let widths = [r.u32("width 0")? as usize, r.u32("width 1")? as usize, r.u32("width 2")? as usize];
        let time_dim = r.u32("time dim")? as usize;
        let max_depth_m = r.f32("max depth")?;
        let n_at = r.pos() as u64;
        let n = r.u64("parameter count")? as usize;
        if n.checked_mul(4).is_none_or(|b| b > r.remaining()) {
            return Err(Error::Format { offset: n_at, reason: format!("parameter count {n} exceeds file size") });
        }
        let params = (0..n).map(|_| r.f32("parameter")).collect::<Result<Vec<_>>>()?;
        let seed = r.u64("seed")?;
        r.finish()?;
        let mut config = DiffusionConfig::new(loss, schedule, (width, height), seed)
            .map_err(|e| Error::Format { offset: 12, reason: e.to_string() })?;
        config.variance = variance;
        let denoiser = DenoiserConfig { widths, time_dim, steps };
        let ck = DiffusionCheckpoint { config, denoiser, max_depth_m, params };
        if DenoiserNet::<f32>::new(denoiser, 0).param_count() != n {
            return Err(Error::Format { offset: n_at, reason: "parameter count does not match architecture".into() });
        }
        Ok(ck)
    }
}

pub fn write_checkpoint(ck: &DiffusionCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &ck.encode())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<DiffusionCheckpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    DiffusionCheckpoint::decode(&bytes)
}
