//! Differentiable operations. Binary elementwise ops require identical
//! shapes; the only broadcasting is the per-channel bias/affine inside
//! convolutions and normalization.

use super::conv::{self, ConvGeometry};
use super::Tensor;
use crate::error::{Error, Result};

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn dims4(t: &Tensor, what: &str) -> Result<[usize; 4]> {
    match t.shape() {
        &[b, c, h, w] => Ok([b, c, h, w]),
        s => Err(Error::Shape(format!("{what}: expected 4-D tensor, got {s:?}"))),
    }
}

fn unary(x: &Tensor, f: impl Fn(f32) -> f32, df: impl Fn(f32, f32) -> f32 + 'static) -> Tensor {
    let xd = x.data();
    let y: Vec<f32> = xd.iter().map(|&v| f(v)).collect();
    let saved = if x.requires_grad() {
        (xd.clone(), y.clone())
    } else {
        (Vec::new(), Vec::new())
    };
    drop(xd);
    Tensor::from_op(
        x.shape().to_vec(),
        y,
        &[x],
        Box::new(move |_, g| {
            let (xs, ys) = &saved;
            let gx = g
                .iter()
                .zip(xs.iter().zip(ys))
                .map(|(&g, (&x, &y))| g * df(x, y))
                .collect();
            vec![Some(gx)]
        }),
    )
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b, "add")?;
    let y = a.data().iter().zip(b.data().iter()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        y,
        &[a, b],
        Box::new(|_, g| vec![Some(g.to_vec()), Some(g.to_vec())]),
    ))
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b, "sub")?;
    let y = a.data().iter().zip(b.data().iter()).map(|(x, y)| x - y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        y,
        &[a, b],
        Box::new(|_, g| vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())]),
    ))
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b, "mul")?;
    let y = a.data().iter().zip(b.data().iter()).map(|(x, y)| x * y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        y,
        &[a, b],
        Box::new(|p, g| {
            let ga = p[0].requires_grad().then(|| {
                g.iter().zip(p[1].data().iter()).map(|(g, b)| g * b).collect()
            });
            let gb = p[1].requires_grad().then(|| {
                g.iter().zip(p[0].data().iter()).map(|(g, a)| g * a).collect()
            });
            vec![ga, gb]
        }),
    ))
}

pub fn scale(x: &Tensor, k: f32) -> Tensor {
    let y = x.data().iter().map(|v| v * k).collect();
    Tensor::from_op(
        x.shape().to_vec(),
        y,
        &[x],
        Box::new(move |_, g| vec![Some(g.iter().map(|v| v * k).collect())]),
    )
}

pub fn add_scalar(x: &Tensor, k: f32) -> Tensor {
    let y = x.data().iter().map(|v| v + k).collect();
    Tensor::from_op(x.shape().to_vec(), y, &[x], Box::new(|_, g| vec![Some(g.to_vec())]))
}

pub fn square(x: &Tensor) -> Tensor {
    unary(x, |v| v * v, |x, _| 2.0 * x)
}

pub fn exp(x: &Tensor) -> Tensor {
    unary(x, f32::exp, |_, y| y)
}

/// Derivative at 0 is taken from the positive side.
pub fn relu(x: &Tensor) -> Tensor {
    unary(x, |v| v.max(0.0), |x, _| if x >= 0.0 { 1.0 } else { 0.0 })
}

pub fn leaky_relu(x: &Tensor, slope: f32) -> Tensor {
    unary(
        x,
        move |v| if v >= 0.0 { v } else { slope * v },
        move |x, _| if x >= 0.0 { 1.0 } else { slope },
    )
}

pub fn tanh(x: &Tensor) -> Tensor {
    unary(x, f32::tanh, |_, y| 1.0 - y * y)
}

pub fn sum(x: &Tensor) -> Tensor {
    let s: f64 = x.data().iter().map(|&v| v as f64).sum();
    let n = x.numel();
    Tensor::from_op(Vec::new(), vec![s as f32], &[x], Box::new(move |_, g| vec![Some(vec![g[0]; n])]))
}

/// Mean of all elements; 0 for an empty tensor.
pub fn mean(x: &Tensor) -> Tensor {
    let n = x.numel();
    if n == 0 {
        return Tensor::from_op(Vec::new(), vec![0.0], &[x], Box::new(|_, _| vec![Some(Vec::new())]));
    }
    scale(&sum(x), 1.0 / n as f32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    /// Extra rows/columns on the far edge of a transposed convolution output.
    pub output_padding: usize,
}

impl ConvSpec {
    pub const fn new(stride: usize, padding: usize) -> Self {
        Self {
            stride,
            padding,
            output_padding: 0,
        }
    }

    pub const fn with_output_padding(mut self, output_padding: usize) -> Self {
        self.output_padding = output_padding;
        self
    }
}

fn check_bias(bias: Option<&Tensor>, channels: usize, what: &str) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [channels] {
            return Err(Error::Shape(format!(
                "{what}: bias shape {:?}, expected [{channels}]",
                b.shape()
            )));
        }
    }
    Ok(())
}

/// Cross-correlation of `[B, Cin, H, W]` with `[Cout, Cin, kh, kw]`.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: ConvSpec) -> Result<Tensor> {
    let [b, cin, h, w] = dims4(input, "conv2d input")?;
    let [cout, wcin, kh, kw] = dims4(weight, "conv2d weight")?;
    if wcin != cin {
        return Err(Error::Shape(format!(
            "conv2d: input channels {cin} but weight expects {wcin}"
        )));
    }
    if spec.stride == 0 {
        return Err(Error::Shape("conv2d: stride must be at least 1".into()));
    }
    if h + 2 * spec.padding < kh {
        return Err(Error::Shape(format!(
            "conv2d: kernel height {kh} exceeds padded input height {}",
            h + 2 * spec.padding
        )));
    }
    if w + 2 * spec.padding < kw {
        return Err(Error::Shape(format!(
            "conv2d: kernel width {kw} exceeds padded input width {}",
            w + 2 * spec.padding
        )));
    }
    check_bias(bias, cout, "conv2d")?;
    let g = ConvGeometry {
        batch: b,
        cx: cin,
        hx: h,
        wx: w,
        cy: cout,
        hy: (h + 2 * spec.padding - kh) / spec.stride + 1,
        wy: (w + 2 * spec.padding - kw) / spec.stride + 1,
        kh,
        kw,
        stride: spec.stride,
        padding: spec.padding,
    };
    let y = {
        let bias_data = bias.map(|t| t.data());
        conv::correlate(&g, &input.data(), &weight.data(), bias_data.as_deref().map(|v| v.as_slice()))
    };
    let mut parents = vec![input, weight];
    parents.extend(bias);
    Ok(Tensor::from_op(
        vec![b, cout, g.hy, g.wy],
        y,
        &parents,
        Box::new(move |p, gy| {
            let gx = p[0]
                .requires_grad()
                .then(|| conv::scatter(&g, gy, &p[1].data(), None));
            let gw = p[1]
                .requires_grad()
                .then(|| conv::kernel_grad(&g, &p[0].data(), gy));
            let mut out = vec![gx, gw];
            if p.len() == 3 {
                out.push(
                    p[2].requires_grad()
                        .then(|| conv::channel_sums(g.batch, g.cy, g.hy * g.wy, gy)),
                );
            }
            out
        }),
    ))
}

/// Fractionally-strided convolution, the adjoint of [`conv2d`]. The weight is
/// `[Cin, Cout, kh, kw]`; the output extent is
/// `(H - 1) * stride - 2 * padding + kh + output_padding`.
pub fn conv_transpose2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    spec: ConvSpec,
) -> Result<Tensor> {
    let [b, cin, h, w] = dims4(input, "conv_transpose2d input")?;
    let [wcin, cout, kh, kw] = dims4(weight, "conv_transpose2d weight")?;
    if wcin != cin {
        return Err(Error::Shape(format!(
            "conv_transpose2d: input channels {cin} but weight expects {wcin}"
        )));
    }
    if spec.stride == 0 || h == 0 || w == 0 {
        return Err(Error::Shape("conv_transpose2d: empty input or zero stride".into()));
    }
    if spec.output_padding >= spec.stride.max(spec.padding + 1) {
        return Err(Error::Shape("conv_transpose2d: output_padding too large".into()));
    }
    let full_h = (h - 1) * spec.stride + kh + spec.output_padding;
    let full_w = (w - 1) * spec.stride + kw + spec.output_padding;
    if full_h <= 2 * spec.padding || full_w <= 2 * spec.padding {
        return Err(Error::Shape("conv_transpose2d: padding removes the whole output".into()));
    }
    check_bias(bias, cout, "conv_transpose2d")?;
    // As a forward convolution: x = our output, y = our input.
    let g = ConvGeometry {
        batch: b,
        cx: cout,
        hx: full_h - 2 * spec.padding,
        wx: full_w - 2 * spec.padding,
        cy: cin,
        hy: h,
        wy: w,
        kh,
        kw,
        stride: spec.stride,
        padding: spec.padding,
    };
    let out = {
        let bias_data = bias.map(|t| t.data());
        conv::scatter(&g, &input.data(), &weight.data(), bias_data.as_deref().map(|v| v.as_slice()))
    };
    let mut parents = vec![input, weight];
    parents.extend(bias);
    Ok(Tensor::from_op(
        vec![b, cout, g.hx, g.wx],
        out,
        &parents,
        Box::new(move |p, gout| {
            let gin = p[0]
                .requires_grad()
                .then(|| conv::correlate(&g, gout, &p[1].data(), None));
            let gw = p[1]
                .requires_grad()
                .then(|| conv::kernel_grad(&g, gout, &p[0].data()));
            let mut out = vec![gin, gw];
            if p.len() == 3 {
                out.push(
                    p[2].requires_grad()
                        .then(|| conv::channel_sums(g.batch, g.cx, g.hx * g.wx, gout)),
                );
            }
            out
        }),
    ))
}

/// Per-sample, per-channel spatial standardization with optional affine
/// `gamma`/`beta` of shape `[C]`.
pub fn instance_norm2d(
    input: &Tensor,
    gamma: Option<&Tensor>,
    beta: Option<&Tensor>,
    eps: f32,
) -> Result<Tensor> {
    let [b, c, h, w] = dims4(input, "instance_norm2d")?;
    let plane = h * w;
    if plane == 0 {
        return Err(Error::Shape("instance_norm2d: empty spatial extent".into()));
    }
    check_bias(gamma, c, "instance_norm2d gamma")?;
    check_bias(beta, c, "instance_norm2d beta")?;
    let x = input.data();
    let gdat = gamma.map(|t| t.to_vec());
    let bdat = beta.map(|t| t.to_vec());
    let mut xhat = vec![0.0f32; x.len()];
    let mut inv_std = vec![0.0f64; b * c];
    let mut y = vec![0.0f32; x.len()];
    for bc in 0..b * c {
        let ch = bc % c;
        let xs = &x[bc * plane..][..plane];
        let mean = xs.iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
        let var = xs.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / plane as f64;
        let inv = 1.0 / (var + eps as f64).sqrt();
        inv_std[bc] = inv;
        let gm = gdat.as_ref().map_or(1.0, |g| g[ch] as f64);
        let bt = bdat.as_ref().map_or(0.0, |b| b[ch] as f64);
        for k in 0..plane {
            let xh = (xs[k] as f64 - mean) * inv;
            xhat[bc * plane + k] = xh as f32;
            y[bc * plane + k] = (xh * gm + bt) as f32;
        }
    }
    drop(x);
    let mut parents = vec![input];
    let has_gamma = gamma.is_some();
    parents.extend(gamma);
    parents.extend(beta);
    Ok(Tensor::from_op(
        vec![b, c, h, w],
        y,
        &parents,
        Box::new(move |p, gy| {
            let gvals = has_gamma.then(|| p[1].to_vec());
            let gx = p[0].requires_grad().then(|| {
                let mut gx = vec![0.0f32; gy.len()];
                for bc in 0..b * c {
                    let gm = gvals.as_ref().map_or(1.0, |g| g[bc % c] as f64);
                    let gys = &gy[bc * plane..][..plane];
                    let xh = &xhat[bc * plane..][..plane];
                    let mut mean_g = 0.0;
                    let mut mean_gx = 0.0;
                    for k in 0..plane {
                        let gh = gys[k] as f64 * gm;
                        mean_g += gh;
                        mean_gx += gh * xh[k] as f64;
                    }
                    mean_g /= plane as f64;
                    mean_gx /= plane as f64;
                    for k in 0..plane {
                        let gh = gys[k] as f64 * gm;
                        gx[bc * plane + k] =
                            (inv_std[bc] * (gh - mean_g - xh[k] as f64 * mean_gx)) as f32;
                    }
                }
                gx
            });
            let mut out = vec![gx];
            let per_channel = |f: &dyn Fn(usize) -> f64| -> Vec<f32> {
                (0..c)
                    .map(|ch| {
                        let mut acc = 0.0;
                        for bi in 0..b {
                            let bc = bi * c + ch;
                            for k in 0..plane {
                                acc += gy[bc * plane + k] as f64 * f(bc * plane + k);
                            }
                        }
                        acc as f32
                    })
                    .collect()
            };
            if has_gamma {
                out.push(p[1].requires_grad().then(|| per_channel(&|i| xhat[i] as f64)));
            }
            if p.len() > out.len() {
                let bi = out.len();
                out.push(p[bi].requires_grad().then(|| per_channel(&|_| 1.0)));
            }
            out
        }),
    ))
}

/// Batch normalization over `(B, H, W)` with affine `gamma`/`beta` of shape
/// `[C]`. With `stats = Some((mean, var))` those fixed statistics are used
/// (inference); otherwise batch statistics are computed and returned
/// alongside the output so the caller can track running averages.
pub fn batch_norm2d(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    stats: Option<(&[f32], &[f32])>,
    eps: f32,
) -> Result<(Tensor, Vec<f32>, Vec<f32>)> {
    let [b, c, h, w] = dims4(input, "batch_norm2d")?;
    let plane = h * w;
    let n = b * plane;
    if n == 0 {
        return Err(Error::Shape("batch_norm2d: empty batch".into()));
    }
    check_bias(Some(gamma), c, "batch_norm2d gamma")?;
    check_bias(Some(beta), c, "batch_norm2d beta")?;
    if let Some((m, v)) = stats {
        if m.len() != c || v.len() != c {
            return Err(Error::Shape(format!("batch_norm2d: statistics for {} channels, input has {c}", m.len())));
        }
    }
    let x = input.data();
    let gdat = gamma.to_vec();
    let bdat = beta.to_vec();
    let mut means = vec![0.0f32; c];
    let mut vars = vec![0.0f32; c];
    let mut inv_std = vec![0.0f64; c];
    let mut xhat = vec![0.0f32; x.len()];
    let mut y = vec![0.0f32; x.len()];
    for ch in 0..c {
        let planes = || (0..b).map(move |bi| (bi * c + ch) * plane);
        let (mean, var) = match stats {
            Some((m, v)) => (m[ch] as f64, v[ch] as f64),
            None => {
                let mean = planes().flat_map(|o| &x[o..o + plane]).map(|&v| v as f64).sum::<f64>() / n as f64;
                let var = planes()
                    .flat_map(|o| &x[o..o + plane])
                    .map(|&v| (v as f64 - mean).powi(2))
                    .sum::<f64>()
                    / n as f64;
                (mean, var)
            }
        };
        means[ch] = mean as f32;
        vars[ch] = var as f32;
        let inv = 1.0 / (var + eps as f64).sqrt();
        inv_std[ch] = inv;
        for o in planes() {
            for k in o..o + plane {
                let xh = (x[k] as f64 - mean) * inv;
                xhat[k] = xh as f32;
                y[k] = (xh * gdat[ch] as f64 + bdat[ch] as f64) as f32;
            }
        }
    }
    drop(x);
    let batch_stats = stats.is_none();
    let out = Tensor::from_op(
        vec![b, c, h, w],
        y,
        &[input, gamma, beta],
        Box::new(move |p, gy| {
            let sum_over = |ch: usize, f: &dyn Fn(usize) -> f64| -> f64 {
                let mut acc = 0.0;
                for bi in 0..b {
                    let o = (bi * c + ch) * plane;
                    for k in o..o + plane {
                        acc += gy[k] as f64 * f(k);
                    }
                }
                acc
            };
            let gx = p[0].requires_grad().then(|| {
                let mut gx = vec![0.0f32; gy.len()];
                for ch in 0..c {
                    let gm = gdat[ch] as f64;
                    let (mean_g, mean_gx) = if batch_stats {
                        (gm * sum_over(ch, &|_| 1.0) / n as f64, gm * sum_over(ch, &|k| xhat[k] as f64) / n as f64)
                    } else {
                        (0.0, 0.0)
                    };
                    for bi in 0..b {
                        let o = (bi * c + ch) * plane;
                        for k in o..o + plane {
                            let gh = gy[k] as f64 * gm;
                            gx[k] = (inv_std[ch] * (gh - mean_g - xhat[k] as f64 * mean_gx)) as f32;
                        }
                    }
                }
                gx
            });
            let gg = p[1]
                .requires_grad()
                .then(|| (0..c).map(|ch| sum_over(ch, &|k| xhat[k] as f64) as f32).collect());
            let gb = p[2]
                .requires_grad()
                .then(|| (0..c).map(|ch| sum_over(ch, &|_| 1.0) as f32).collect());
            vec![gx, gg, gb]
        }),
    );
    Ok((out, means, vars))
}

/// Visits every `(b, h, w)` location's channel vector of a `[B, C, H, W]`
/// buffer; `f` receives the element indices for that location.
fn for_each_location(dims: [usize; 4], mut f: impl FnMut(&mut dyn Iterator<Item = usize>)) {
    let [b, c, h, w] = dims;
    let plane = h * w;
    for bi in 0..b {
        for k in 0..plane {
            let base = bi * c * plane + k;
            f(&mut (0..c).map(move |ch| base + ch * plane));
        }
    }
}

/// Softmax across channels at every spatial location.
pub fn softmax_over_channels(input: &Tensor) -> Result<Tensor> {
    let dims = dims4(input, "softmax_over_channels")?;
    if dims[1] == 0 {
        return Err(Error::Shape("softmax_over_channels: no channels".into()));
    }
    let x = input.data();
    let mut y = vec![0.0f32; x.len()];
    for_each_location(dims, |idx| {
        let idx: Vec<usize> = idx.collect();
        let m = idx.iter().map(|&i| x[i]).fold(f32::NEG_INFINITY, f32::max) as f64;
        let z: f64 = idx.iter().map(|&i| (x[i] as f64 - m).exp()).sum();
        for &i in &idx {
            y[i] = ((x[i] as f64 - m).exp() / z) as f32;
        }
    });
    drop(x);
    let saved = y.clone();
    Ok(Tensor::from_op(
        input.shape().to_vec(),
        y,
        &[input],
        Box::new(move |_, g| {
            let mut gx = vec![0.0f32; g.len()];
            for_each_location(dims, |idx| {
                let idx: Vec<usize> = idx.collect();
                let dot: f64 = idx.iter().map(|&i| g[i] as f64 * saved[i] as f64).sum();
                for &i in &idx {
                    gx[i] = (saved[i] as f64 * (g[i] as f64 - dot)) as f32;
                }
            });
            vec![Some(gx)]
        }),
    ))
}

/// Log-softmax across channels at every spatial location.
pub fn log_softmax_over_channels(input: &Tensor) -> Result<Tensor> {
    let dims = dims4(input, "log_softmax_over_channels")?;
    if dims[1] == 0 {
        return Err(Error::Shape("log_softmax_over_channels: no channels".into()));
    }
    let x = input.data();
    let mut y = vec![0.0f32; x.len()];
    let mut probs = vec![0.0f32; x.len()];
    for_each_location(dims, |idx| {
        let idx: Vec<usize> = idx.collect();
        let m = idx.iter().map(|&i| x[i]).fold(f32::NEG_INFINITY, f32::max) as f64;
        let lse = m + idx.iter().map(|&i| (x[i] as f64 - m).exp()).sum::<f64>().ln();
        for &i in &idx {
            let l = x[i] as f64 - lse;
            y[i] = l as f32;
            probs[i] = l.exp() as f32;
        }
    });
    drop(x);
    Ok(Tensor::from_op(
        input.shape().to_vec(),
        y,
        &[input],
        Box::new(move |_, g| {
            let mut gx = vec![0.0f32; g.len()];
            for_each_location(dims, |idx| {
                let idx: Vec<usize> = idx.collect();
                let total: f64 = idx.iter().map(|&i| g[i] as f64).sum();
                for &i in &idx {
                    gx[i] = (g[i] as f64 - probs[i] as f64 * total) as f32;
                }
            });
            vec![Some(gx)]
        }),
    ))
}

/// Zero padding of the two spatial axes: `[top, bottom, left, right]`.
pub fn pad2d(input: &Tensor, pad: [usize; 4]) -> Result<Tensor> {
    let [b, c, h, w] = dims4(input, "pad2d")?;
    let [top, bottom, left, right] = pad;
    if pad == [0; 4] {
        return Ok(input.clone());
    }
    let (ho, wo) = (h + top + bottom, w + left + right);
    let x = input.data();
    let mut y = vec![0.0f32; b * c * ho * wo];
    for bc in 0..b * c {
        for r in 0..h {
            let src = &x[(bc * h + r) * w..][..w];
            y[(bc * ho + r + top) * wo + left..][..w].copy_from_slice(src);
        }
    }
    drop(x);
    Ok(Tensor::from_op(
        vec![b, c, ho, wo],
        y,
        &[input],
        Box::new(move |_, g| {
            let mut gx = vec![0.0f32; b * c * h * w];
            for bc in 0..b * c {
                for r in 0..h {
                    gx[(bc * h + r) * w..][..w].copy_from_slice(&g[(bc * ho + r + top) * wo + left..][..w]);
                }
            }
            vec![Some(gx)]
        }),
    ))
}

/// Spatial window `[top .. top + height, left .. left + width]`.
pub fn crop2d(input: &Tensor, top: usize, left: usize, height: usize, width: usize) -> Result<Tensor> {
    let [b, c, h, w] = dims4(input, "crop2d")?;
    if top + height > h || left + width > w {
        return Err(Error::Shape(format!(
            "crop2d: window {height}x{width} at ({top},{left}) exceeds {h}x{w}"
        )));
    }
    if (top, left, height, width) == (0, 0, h, w) {
        return Ok(input.clone());
    }
    let x = input.data();
    let mut y = vec![0.0f32; b * c * height * width];
    for bc in 0..b * c {
        for r in 0..height {
            y[(bc * height + r) * width..][..width]
                .copy_from_slice(&x[(bc * h + r + top) * w + left..][..width]);
        }
    }
    drop(x);
    Ok(Tensor::from_op(
        vec![b, c, height, width],
        y,
        &[input],
        Box::new(move |_, g| {
            let mut gx = vec![0.0f32; b * c * h * w];
            for bc in 0..b * c {
                for r in 0..height {
                    gx[(bc * h + r + top) * w + left..][..width]
                        .copy_from_slice(&g[(bc * height + r) * width..][..width]);
                }
            }
            vec![Some(gx)]
        }),
    ))
}

/// Source index pair and weight of the second for half-pixel-centred
/// bilinear resampling along one axis.
fn bilinear_taps(out: usize, inp: usize) -> Vec<(usize, usize, f32)> {
    let scale = inp as f64 / out as f64;
    (0..out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(inp - 1);
            let i1 = (i0 + 1).min(inp - 1);
            (i0, i1, (src - i0 as f64) as f32)
        })
        .collect()
}

/// Bilinear resize of the spatial axes to `height x width`.
pub fn upsample_bilinear(input: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let [b, c, h, w] = dims4(input, "upsample_bilinear")?;
    if h == 0 || w == 0 || height == 0 || width == 0 {
        return Err(Error::Shape("upsample_bilinear: empty extent".into()));
    }
    let rows = bilinear_taps(height, h);
    let cols = bilinear_taps(width, w);
    let x = input.data();
    let mut y = vec![0.0f32; b * c * height * width];
    for bc in 0..b * c {
        let xs = &x[bc * h * w..][..h * w];
        for (r, &(r0, r1, ry)) in rows.iter().enumerate() {
            for (q, &(c0, c1, cx)) in cols.iter().enumerate() {
                let top = xs[r0 * w + c0] * (1.0 - cx) + xs[r0 * w + c1] * cx;
                let bot = xs[r1 * w + c0] * (1.0 - cx) + xs[r1 * w + c1] * cx;
                y[(bc * height + r) * width + q] = top * (1.0 - ry) + bot * ry;
            }
        }
    }
    drop(x);
    Ok(Tensor::from_op(
        vec![b, c, height, width],
        y,
        &[input],
        Box::new(move |_, g| {
            let mut gx = vec![0.0f32; b * c * h * w];
            for bc in 0..b * c {
                let gxs = &mut gx[bc * h * w..][..h * w];
                for (r, &(r0, r1, ry)) in rows.iter().enumerate() {
                    for (q, &(c0, c1, cx)) in cols.iter().enumerate() {
                        let gv = g[(bc * height + r) * width + q];
                        gxs[r0 * w + c0] += gv * (1.0 - ry) * (1.0 - cx);
                        gxs[r0 * w + c1] += gv * (1.0 - ry) * cx;
                        gxs[r1 * w + c0] += gv * ry * (1.0 - cx);
                        gxs[r1 * w + c1] += gv * ry * cx;
                    }
                }
            }
            vec![Some(gx)]
        }),
    ))
}
