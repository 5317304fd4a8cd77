use crate::error::{Error, Result};

use super::RgbdSample;

/// Half-pixel-center source coordinate with edge clamping: returns the two
/// neighbour indices and the weight of the second.
#[inline]
fn source_taps(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let pos = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5).clamp(0.0, (src_len - 1) as f64);
    let i0 = pos.floor() as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, pos - i0 as f64)
}

/// Bilinear resize of one `sh × sw` plane to `dh × dw`.
pub fn resize_plane(src: &[f32], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f32> {
    debug_assert_eq!(src.len(), sw * sh);
    if sw == dw && sh == dh {
        return src.to_vec();
    }
    let cols: Vec<_> = (0..dw).map(|x| source_taps(x, sw, dw)).collect();
    let mut out = Vec::with_capacity(dw * dh);
    for y in 0..dh {
        let (y0, y1, fy) = source_taps(y, sh, dh);
        let (r0, r1) = (&src[y0 * sw..(y0 + 1) * sw], &src[y1 * sw..(y1 + 1) * sw]);
        for &(x0, x1, fx) in &cols {
            let top = (1.0 - fx) * r0[x0] as f64 + fx * r0[x1] as f64;
            let bottom = (1.0 - fx) * r1[x0] as f64 + fx * r1[x1] as f64;
            out.push(((1.0 - fy) * top + fy * bottom) as f32);
        }
    }
    out
}

/// Copies the `cw × ch` window at `(x0, y0)` out of a `w`-wide plane.
pub fn crop_plane(src: &[f32], w: usize, x0: usize, y0: usize, cw: usize, ch: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(cw * ch);
    for y in y0..y0 + ch {
        out.extend_from_slice(&src[y * w + x0..y * w + x0 + cw]);
    }
    out
}

/// Resizes all four planes of a sample independently to `(width, height)`.
pub fn preprocess(sample: &RgbdSample, target: (usize, usize)) -> Result<RgbdSample> {
    let (tw, th) = target;
    if tw < 2 || th < 2 {
        return Err(Error::param(format!("target resolution {tw}x{th} is degenerate; need at least 2x2")));
    }
    if sample.resolution() == target {
        return Ok(sample.clone());
    }
    let (sw, sh) = sample.resolution();
    let mut planes = Vec::with_capacity(4 * tw * th);
    for c in 0..4 {
        planes.extend(resize_plane(sample.plane(c), sw, sh, tw, th));
    }
    let mut out = RgbdSample::from_clamped(tw, th, planes, sample.max_depth_m(), sample.provenance)?;
    out.seed = sample.seed;
    Ok(out)
}
