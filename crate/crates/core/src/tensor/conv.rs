//! Direct 2-D correlation kernels shared by `conv2d` and `conv_transpose2d`.
//!
//! All three kernels accumulate in `f64` and give each output element a fixed
//! reduction order, so results do not depend on the number of worker threads.
//!
//! Naming follows the forward convolution: `x` is `[B, Cx, Hx, Wx]`, `y` is
//! `[B, Cy, Hy, Wy]` and the kernel is `[Cy, Cx, kh, kw]`.

use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub cx: usize,
    pub hx: usize,
    pub wx: usize,
    pub cy: usize,
    pub hy: usize,
    pub wy: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    /// Range of output columns whose tap `k` lands inside `[0, extent)`.
    fn valid(&self, k: usize, out_extent: usize, in_extent: usize) -> (usize, usize) {
        let s = self.stride;
        let p = self.padding;
        // o*s + k - p >= 0
        let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
        // o*s + k - p <= in_extent - 1
        let hi = if in_extent + p > k {
            ((in_extent + p - k - 1) / s + 1).min(out_extent)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    fn x_plane(&self) -> usize {
        self.hx * self.wx
    }

    fn y_plane(&self) -> usize {
        self.hy * self.wy
    }
}

/// `y[b, cy] = bias[cy] + sum_{cx, i, j} w[cy, cx, i, j] * x[b, cx, .. + i, .. + j]`
pub fn correlate(g: &ConvGeometry, x: &[f32], w: &[f32], bias: Option<&[f32]>) -> Vec<f32> {
    let mut y = vec![0.0f32; g.batch * g.cy * g.y_plane()];
    let cols: Vec<_> = (0..g.kw).map(|j| g.valid(j, g.wy, g.wx)).collect();
    let rows: Vec<_> = (0..g.kh).map(|i| g.valid(i, g.hy, g.hx)).collect();
    y.par_chunks_mut(g.y_plane()).enumerate().for_each(|(plane, out)| {
        let b = plane / g.cy;
        let co = plane % g.cy;
        let mut acc = vec![bias.map_or(0.0, |bv| bv[co] as f64); g.y_plane()];
        for ci in 0..g.cx {
            let xin = &x[(b * g.cx + ci) * g.x_plane()..][..g.x_plane()];
            let wk = &w[(co * g.cx + ci) * g.kh * g.kw..][..g.kh * g.kw];
            for i in 0..g.kh {
                let (r0, r1) = rows[i];
                for j in 0..g.kw {
                    let wv = wk[i * g.kw + j] as f64;
                    let (c0, c1) = cols[j];
                    for oh in r0..r1 {
                        let ih = oh * g.stride + i - g.padding;
                        let xrow = &xin[ih * g.wx..][..g.wx];
                        let arow = &mut acc[oh * g.wy..][..g.wy];
                        if g.stride == 1 {
                            let off = j as isize - g.padding as isize;
                            let src = &xrow[(c0 as isize + off) as usize..(c1 as isize + off) as usize];
                            for (a, &xv) in arow[c0..c1].iter_mut().zip(src) {
                                *a += wv * xv as f64;
                            }
                        } else {
                            for ow in c0..c1 {
                                arow[ow] += wv * xrow[ow * g.stride + j - g.padding] as f64;
                            }
                        }
                    }
                }
            }
        }
        for (o, a) in out.iter_mut().zip(&acc) {
            *o = *a as f32;
        }
    });
    y
}

/// Adjoint of [`correlate`] with respect to `x`:
/// `x[b, cx, .. + i, .. + j] += w[cy, cx, i, j] * y[b, cy]`.
pub fn scatter(g: &ConvGeometry, y: &[f32], w: &[f32], bias: Option<&[f32]>) -> Vec<f32> {
    let mut x = vec![0.0f32; g.batch * g.cx * g.x_plane()];
    let cols: Vec<_> = (0..g.kw).map(|j| g.valid(j, g.wy, g.wx)).collect();
    let rows: Vec<_> = (0..g.kh).map(|i| g.valid(i, g.hy, g.hx)).collect();
    x.par_chunks_mut(g.x_plane()).enumerate().for_each(|(plane, out)| {
        let b = plane / g.cx;
        let ci = plane % g.cx;
        let mut acc = vec![bias.map_or(0.0, |bv| bv[ci] as f64); g.x_plane()];
        for co in 0..g.cy {
            let yin = &y[(b * g.cy + co) * g.y_plane()..][..g.y_plane()];
            let wk = &w[(co * g.cx + ci) * g.kh * g.kw..][..g.kh * g.kw];
            for i in 0..g.kh {
                let (r0, r1) = rows[i];
                for j in 0..g.kw {
                    let wv = wk[i * g.kw + j] as f64;
                    let (c0, c1) = cols[j];
                    for oh in r0..r1 {
                        let ih = oh * g.stride + i - g.padding;
                        let yrow = &yin[oh * g.wy..][..g.wy];
                        let arow = &mut acc[ih * g.wx..][..g.wx];
                        if g.stride == 1 {
                            let off = j as isize - g.padding as isize;
                            let dst = &mut arow[(c0 as isize + off) as usize..(c1 as isize + off) as usize];
                            for (a, &yv) in dst.iter_mut().zip(&yrow[c0..c1]) {
                                *a += wv * yv as f64;
                            }
                        } else {
                            for ow in c0..c1 {
                                arow[ow * g.stride + j - g.padding] += wv * yrow[ow] as f64;
                            }
                        }
                    }
                }
            }
        }
        for (o, a) in out.iter_mut().zip(&acc) {
            *o = *a as f32;
        }
    });
    x
}

/// Gradient of [`correlate`] with respect to the kernel:
/// `w[cy, cx, i, j] = sum_{b, oh, ow} y[b, cy, oh, ow] * x[b, cx, oh*s + i - p, ow*s + j - p]`.
pub fn kernel_grad(g: &ConvGeometry, x: &[f32], y: &[f32]) -> Vec<f32> {
    let ksz = g.kh * g.kw;
    let mut w = vec![0.0f32; g.cy * g.cx * ksz];
    let cols: Vec<_> = (0..g.kw).map(|j| g.valid(j, g.wy, g.wx)).collect();
    let rows: Vec<_> = (0..g.kh).map(|i| g.valid(i, g.hy, g.hx)).collect();
    w.par_chunks_mut(g.cx * ksz).enumerate().for_each(|(co, out)| {
        for ci in 0..g.cx {
            for i in 0..g.kh {
                let (r0, r1) = rows[i];
                for j in 0..g.kw {
                    let (c0, c1) = cols[j];
                    let mut acc = 0.0f64;
                    for b in 0..g.batch {
                        let xin = &x[(b * g.cx + ci) * g.x_plane()..][..g.x_plane()];
                        let yin = &y[(b * g.cy + co) * g.y_plane()..][..g.y_plane()];
                        for oh in r0..r1 {
                            let ih = oh * g.stride + i - g.padding;
                            let xrow = &xin[ih * g.wx..][..g.wx];
                            let yrow = &yin[oh * g.wy..][..g.wy];
                            if g.stride == 1 {
                                let off = j as isize - g.padding as isize;
                                let src = &xrow[(c0 as isize + off) as usize..(c1 as isize + off) as usize];
                                acc += dot(&yrow[c0..c1], src);
                            } else {
                                for ow in c0..c1 {
                                    acc += yrow[ow] as f64 * xrow[ow * g.stride + j - g.padding] as f64;
                                }
                            }
                        }
                    }
                    out[ci * ksz + i * g.kw + j] = acc as f32;
                }
            }
        }
    });
    w
}

/// Per-channel sum over batch and space.
pub fn channel_sums(batch: usize, channels: usize, plane: usize, y: &[f32]) -> Vec<f32> {
    (0..channels)
        .map(|c| {
            let mut acc = 0.0f64;
            for b in 0..batch {
                for &v in &y[(b * channels + c) * plane..][..plane] {
                    acc += v as f64;
                }
            }
            acc as f32
        })
        .collect()
}

/// Fixed-order dot product in `f64` using four independent partial sums.
fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut lanes = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            lanes[k] += x[k] as f64 * y[k] as f64;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += *x as f64 * *y as f64;
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}
