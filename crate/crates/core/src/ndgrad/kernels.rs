//! Raw loops behind the differentiable ops. All reductions run in a fixed
//! sequential order so results are bit-reproducible.

use crate::scalar::Scalar;

/// `c[m×p] += a[m×k] · b[k×p]`, each output accumulated over `k` in order.
pub(crate) fn gemm_acc<S: Scalar>(m: usize, k: usize, p: usize, a: &[S], b: &[S], c: &mut [S]) {
    assert!(a.len() >= m * k && b.len() >= k * p && c.len() >= m * p);
    let mut i = 0;
    while i + 4 <= m {
        let block = &mut c[i * p..(i + 4) * p];
        let (c0, rest) = block.split_at_mut(p);
        let (c1, rest) = rest.split_at_mut(p);
        let (c2, c3) = rest.split_at_mut(p);
        for kk in 0..k {
            let a0 = a[i * k + kk];
            let a1 = a[(i + 1) * k + kk];
            let a2 = a[(i + 2) * k + kk];
            let a3 = a[(i + 3) * k + kk];
            let brow = &b[kk * p..(kk + 1) * p];
            for j in 0..p {
                let bv = brow[j];
                c0[j] += a0 * bv;
                c1[j] += a1 * bv;
                c2[j] += a2 * bv;
                c3[j] += a3 * bv;
            }
        }
        i += 4;
    }
    while i < m {
        let crow = &mut c[i * p..(i + 1) * p];
        for kk in 0..k {
            let av = a[i * k + kk];
            let brow = &b[kk * p..(kk + 1) * p];
            for j in 0..p {
                crow[j] += av * brow[j];
            }
        }
        i += 1;
    }
}

pub(crate) fn transpose<S: Scalar>(rows: usize, cols: usize, src: &[S]) -> Vec<S> {
    let mut out = vec![S::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    pub fn p(&self) -> usize {
        self.ho * self.wo
    }

    /// Source pixel for output `(oy, ox)` and tap `(ky, kx)`, if inside the image.
    #[inline]
    fn src(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ky) as isize - self.pad as isize;
        let x = (ox * self.stride + kx) as isize - self.pad as isize;
        if y < 0 || x < 0 || y >= self.h as isize || x >= self.w as isize {
            None
        } else {
            Some((y as usize, x as usize))
        }
    }
}

/// Unfolds one image `[cin, h, w]` into `[k, p]` columns.
pub(crate) fn im2col<S: Scalar>(g: &ConvGeom, x: &[S], col: &mut [S]) {
    let p = g.p();
    for ci in 0..g.cin {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    for ox in 0..g.wo {
                        dst[oy * g.wo + ox] = match g.src(oy, ox, ky, kx) {
                            Some((y, xx)) => x[(ci * g.h + y) * g.w + xx],
                            None => S::zero(),
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `[k, p]` columns back into `[cin, h, w]`.
pub(crate) fn col2im_acc<S: Scalar>(g: &ConvGeom, col: &[S], x: &mut [S]) {
    let p = g.p();
    for ci in 0..g.cin {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    for ox in 0..g.wo {
                        if let Some((y, xx)) = g.src(oy, ox, ky, kx) {
                            x[(ci * g.h + y) * g.w + xx] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<S: Scalar>(
    g: &ConvGeom,
    n: usize,
    input: &[S],
    kernel: &[S],
    bias: &[S],
) -> Vec<S> {
    let (k, p) = (g.k(), g.p());
    let in_stride = g.cin * g.h * g.w;
    let out_stride = g.cout * p;
    let mut out = vec![S::zero(); n * out_stride];
    let mut col = vec![S::zero(); k * p];
    for b in 0..n {
        im2col(g, &input[b * in_stride..(b + 1) * in_stride], &mut col);
        let dst = &mut out[b * out_stride..(b + 1) * out_stride];
        gemm_acc(g.cout, k, p, kernel, &col, dst);
        for (o, &bv) in bias.iter().enumerate() {
            for v in &mut dst[o * p..(o + 1) * p] {
                *v += bv;
            }
        }
    }
    out
}

/// Gradients of a conv2d w.r.t. input, kernel and bias. `None` skips a side.
pub(crate) struct ConvGrads<'a, S> {
    pub input: Option<&'a mut [S]>,
    pub kernel: Option<&'a mut [S]>,
    pub bias: Option<&'a mut [S]>,
}

pub(crate) fn conv2d_backward<S: Scalar>(
    g: &ConvGeom,
    n: usize,
    input: &[S],
    kernel: &[S],
    grad_out: &[S],
    mut grads: ConvGrads<'_, S>,
) {
    let (k, p) = (g.k(), g.p());
    let in_stride = g.cin * g.h * g.w;
    let out_stride = g.cout * p;
    let kernel_t = grads.input.as_ref().map(|_| transpose(g.cout, k, kernel));
    let mut col = vec![S::zero(); k * p];
    let mut col_t = vec![S::zero(); p * k];
    for b in 0..n {
        let gout = &grad_out[b * out_stride..(b + 1) * out_stride];
        if let Some(gk) = grads.kernel.as_deref_mut() {
            im2col(g, &input[b * in_stride..(b + 1) * in_stride], &mut col);
            for r in 0..k {
                for c in 0..p {
                    col_t[c * k + r] = col[r * p + c];
                }
            }
            gemm_acc(g.cout, p, k, gout, &col_t, gk);
        }
        if let Some(gb) = grads.bias.as_deref_mut() {
            for (o, acc) in gb.iter_mut().enumerate() {
                for &v in &gout[o * p..(o + 1) * p] {
                    *acc += v;
                }
            }
        }
        if let (Some(gx), Some(kt)) = (grads.input.as_deref_mut(), kernel_t.as_ref()) {
            col.iter_mut().for_each(|v| *v = S::zero());
            gemm_acc(k, g.cout, p, kt, gout, &mut col);
            col2im_acc(g, &col, &mut gx[b * in_stride..(b + 1) * in_stride]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_product() {
        let (m, k, p) = (5, 3, 7);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * p).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut c = vec![0.0; m * p];
        gemm_acc(m, k, p, &a, &b, &mut c);
        for i in 0..m {
            for j in 0..p {
                let mut acc = 0.0;
                for kk in 0..k {
                    acc += a[i * k + kk] * b[kk * p + j];
                }
                assert_eq!(c[i * p + j], acc);
            }
        }
    }
}
