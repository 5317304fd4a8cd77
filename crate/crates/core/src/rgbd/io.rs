//! Binary dataset container and JSON-lines sidecar manifest.
//!
//! Layout (little endian): `"R4DD"`, u32 version, u32 count, u32 width,
//! u32 height, f32 max depth in meters, then per sample one provenance byte
//! followed by the R, G, B and depth planes as f32.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{write_atomic, Reader};
use crate::error::{Error, Result};

use super::{Provenance, RgbdDataset, RgbdSample};

pub const MAGIC: &[u8; 4] = b"R4DD";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

pub fn encode_dataset(ds: &RgbdDataset) -> Vec<u8> {
    let plane = ds.width() * ds.height();
    let mut out = Vec::with_capacity(HEADER_LEN + ds.len() * (1 + 16 * plane));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    out.extend_from_slice(&(ds.width() as u32).to_le_bytes());
    out.extend_from_slice(&(ds.height() as u32).to_le_bytes());
    out.extend_from_slice(&ds.max_depth_m().to_le_bytes());
    for s in ds.samples() {
        out.push(s.provenance.tag());
        for v in s.planes() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_dataset(bytes: &[u8]) -> Result<RgbdDataset> {
    let mut c = Reader::new(bytes);
    let magic = c.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}, expected {MAGIC:?}")));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let count = c.u32("count")? as usize;
    let width = c.u32("width")? as usize;
    let height = c.u32("height")? as usize;
    let max_depth_m = c.f32("max depth")?;
    if width == 0 || height == 0 {
        return Err(Error::format(12, format!("degenerate resolution {width}x{height}")));
    }
    if !(max_depth_m > 0.0 && max_depth_m.is_finite()) {
        return Err(Error::format(20, format!("invalid max depth {max_depth_m}")));
    }
    let plane = width * height;
    let per_sample = 1 + 16 * plane;
    let needed = (count as u64) * per_sample as u64;
    let available = (bytes.len() - HEADER_LEN) as u64;
    if needed > available {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated: header announces {count} samples ({needed} bytes), only {available} present"),
        ));
    }
    let mut ds = RgbdDataset::new(width, height, max_depth_m);
    for i in 0..count {
        let at = c.pos() as u64;
        let tag = c.take(1, "provenance")?[0];
        let provenance =
            Provenance::from_tag(tag).ok_or_else(|| Error::format(at, format!("unknown provenance tag {tag}")))?;
        let raw = c.take(16 * plane, "planes")?;
        let planes: Vec<f32> = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        let sample = RgbdSample::new(width, height, planes, max_depth_m, provenance)
            .map_err(|e| Error::format(at + 1, format!("sample {i}: {e}")))?;
        ds.push(sample)?;
    }
    c.finish()?;
    Ok(ds)
}

pub fn write_dataset(ds: &RgbdDataset, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_dataset(ds))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<RgbdDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub index: usize,
    pub provenance: Provenance,
    pub seed: Option<u64>,
}

pub fn write_manifest(ds: &RgbdDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = Vec::new();
    for (index, s) in ds.samples().iter().enumerate() {
        let rec = ManifestRecord { index, provenance: s.provenance, seed: s.seed };
        serde_json::to_writer(&mut out, &rec).expect("manifest record serializes");
        out.push(b'\n');
    }
    write_atomic(path.as_ref(), &out)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut offset = 0u64;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            let rec = serde_json::from_str(&line).map_err(|e| Error::format(offset, format!("manifest: {e}")))?;
            records.push(rec);
        }
        offset += line.len() as u64 + 1;
    }
    Ok(records)
}
