//! Training objectives: KL cycle consistency over channel-softmax feature
//! distributions, least-squares adversarial losses, and pixel-wise
//! cross-entropy for segmentation.

use crate::error::{Error, Result};
use crate::tensor::{add, add_scalar, mean, scale, square, Tensor};

/// Label value excluded from the segmentation loss and metrics.
pub const IGNORE_INDEX: u8 = 255;

/// Default weight of the cycle term relative to the adversarial term.
pub const DEFAULT_LAMBDA_CYC: f32 = 10.0;

/// A scalar loss attached to the differentiation graph.
#[derive(Debug, Clone)]
pub struct LossValue(Tensor);

impl LossValue {
    pub fn new(t: Tensor) -> Self {
        debug_assert_eq!(t.numel(), 1);
        Self(t)
    }

    pub fn value(&self) -> f32 {
        self.0.item()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn backward(&self) -> Result<()> {
        self.0.backward()
    }

    /// Errors naming `term` if the value is NaN or infinite.
    pub fn ensure_finite(&self, term: &str) -> Result<()> {
        let v = self.value();
        if v.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("{term} = {v}")))
        }
    }

    pub fn plus(&self, other: &LossValue) -> LossValue {
        LossValue(add(&self.0, &other.0).expect("scalar shapes"))
    }

    pub fn scaled(&self, k: f32) -> LossValue {
        LossValue(scale(&self.0, k))
    }
}

/// Log-softmax across `k` channels of one location whose elements sit
/// `stride` apart starting at `base`.
fn log_softmax_at(x: &[f32], base: usize, stride: usize, k: usize, out: &mut [f64]) {
    let m = (0..k).map(|c| x[base + c * stride]).fold(f32::NEG_INFINITY, f32::max) as f64;
    let lse = m + (0..k).map(|c| (x[base + c * stride] as f64 - m).exp()).sum::<f64>().ln();
    for c in 0..k {
        out[c] = x[base + c * stride] as f64 - lse;
    }
}

/// `mean_{b,h,w} sum_c p_c (ln p_c - ln q_c)` with `p = softmax(original)` and
/// `q = softmax(cycled)` taken across channels at each location.
pub fn kl_cycle_loss(cycled: &Tensor, original: &Tensor) -> Result<LossValue> {
    if cycled.shape() != original.shape() {
        return Err(Error::Shape(format!(
            "kl_cycle_loss: cycled {:?} vs original {:?}",
            cycled.shape(),
            original.shape()
        )));
    }
    let &[b, k, h, w] = cycled.shape() else {
        return Err(Error::Shape(format!(
            "kl_cycle_loss: expected [B, C, H, W], got {:?}",
            cycled.shape()
        )));
    };
    if k == 0 {
        return Err(Error::Shape("kl_cycle_loss: no channels".into()));
    }
    let plane = h * w;
    let locations = b * plane;
    // per element: q_c - p_c (cycled grad) and p_c (u_c - kl_loc) (original grad)
    let mut g_cycled = vec![0.0f32; cycled.numel()];
    let mut g_original = vec![0.0f32; cycled.numel()];
    let mut total = 0.0f64;
    {
        let q_logits = cycled.data();
        let p_logits = original.data();
        let mut lp = vec![0.0f64; k];
        let mut lq = vec![0.0f64; k];
        for bi in 0..b {
            for pos in 0..plane {
                let base = bi * k * plane + pos;
                log_softmax_at(&p_logits, base, plane, k, &mut lp);
                log_softmax_at(&q_logits, base, plane, k, &mut lq);
                let kl: f64 = (0..k).map(|c| lp[c].exp() * (lp[c] - lq[c])).sum();
                total += kl;
                for c in 0..k {
                    let i = base + c * plane;
                    let p = lp[c].exp();
                    g_cycled[i] = (lq[c].exp() - p) as f32;
                    g_original[i] = (p * (lp[c] - lq[c] - kl)) as f32;
                }
            }
        }
    }
    let inv = 1.0 / locations.max(1) as f32;
    let t = Tensor::from_op(
        Vec::new(),
        vec![(total / locations.max(1) as f64) as f32],
        &[cycled, original],
        Box::new(move |p, g| {
            let s = g[0] * inv;
            let scaled = |v: &Vec<f32>| v.iter().map(|x| x * s).collect();
            vec![
                p[0].requires_grad().then(|| scaled(&g_cycled)),
                p[1].requires_grad().then(|| scaled(&g_original)),
            ]
        }),
    );
    Ok(LossValue(t))
}

/// `0.5 * mean((d_real - 1)^2) + 0.5 * mean(d_fake^2)`.
pub fn lsgan_d_loss(d_real: &Tensor, d_fake: &Tensor) -> LossValue {
    let real = mean(&square(&add_scalar(d_real, -1.0)));
    let fake = mean(&square(d_fake));
    LossValue(scale(&add(&real, &fake).expect("scalars"), 0.5))
}

/// `mean((d_fake - 1)^2)`.
pub fn lsgan_g_loss(d_fake: &Tensor) -> LossValue {
    LossValue(mean(&square(&add_scalar(d_fake, -1.0))))
}

/// Mean negative log-likelihood of the labelled class over pixels whose label
/// is not `ignore_index`. With no such pixels the loss is 0 with zero gradient.
pub fn cross_entropy(logits: &Tensor, labels: &[u8], ignore_index: u8) -> Result<LossValue> {
    let &[b, k, h, w] = logits.shape() else {
        return Err(Error::Shape(format!(
            "cross_entropy: expected [B, K, H, W] logits, got {:?}",
            logits.shape()
        )));
    };
    let plane = h * w;
    if labels.len() != b * plane {
        return Err(Error::Shape(format!(
            "cross_entropy: {} labels for logits {:?}",
            labels.len(),
            logits.shape()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l != ignore_index && l as usize >= k) {
        return Err(Error::LabelOutOfRange {
            label: bad as u32,
            classes: k,
        });
    }
    let x = logits.data();
    let mut probs = vec![0.0f32; x.len()];
    let mut total = 0.0f64;
    let mut count = 0usize;
    for bi in 0..b {
        for p in 0..plane {
            let idx = |c: usize| (bi * k + c) * plane + p;
            let m = (0..k).map(|c| x[idx(c)]).fold(f32::NEG_INFINITY, f32::max) as f64;
            let z: f64 = (0..k).map(|c| (x[idx(c)] as f64 - m).exp()).sum();
            for c in 0..k {
                probs[idx(c)] = ((x[idx(c)] as f64 - m).exp() / z) as f32;
            }
            let label = labels[bi * plane + p];
            if label != ignore_index {
                total += -(x[idx(label as usize)] as f64 - m - z.ln());
                count += 1;
            }
        }
    }
    drop(x);
    let value = if count == 0 { 0.0 } else { total / count as f64 };
    let labels = labels.to_vec();
    let t = Tensor::from_op(
        Vec::new(),
        vec![value as f32],
        &[logits],
        Box::new(move |_, g| {
            let mut gx = vec![0.0f32; probs.len()];
            if count == 0 {
                return vec![Some(gx)];
            }
            let s = g[0] / count as f32;
            for bi in 0..b {
                for p in 0..plane {
                    let label = labels[bi * plane + p];
                    if label == ignore_index {
                        continue;
                    }
                    for c in 0..k {
                        let i = (bi * k + c) * plane + p;
                        let onehot = if c == label as usize { 1.0 } else { 0.0 };
                        gx[i] = (probs[i] - onehot) * s;
                    }
                }
            }
            vec![Some(gx)]
        }),
    );
    Ok(LossValue(t))
}
