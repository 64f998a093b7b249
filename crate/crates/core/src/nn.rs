//! Parameterized layers shared by the segmenter and the FeatureGAN.

use rand::Rng;

use crate::colorlab::RgbImage;
use crate::error::{Error, Result};
use crate::tensor::{batch_norm2d, conv2d, conv_transpose2d, instance_norm2d, ConvSpec, Tensor};

pub const NORM_EPS: f32 = 1e-5;

/// Named trainable tensors of a model, in a fixed order.
pub type NamedParams = Vec<(String, Tensor)>;

pub trait Module {
    fn named_params(&self, prefix: &str) -> NamedParams;

    /// Non-trainable state saved with the model, such as running statistics.
    fn named_buffers(&self, _prefix: &str) -> NamedParams {
        Vec::new()
    }

    fn params(&self) -> Vec<Tensor> {
        self.named_params("").into_iter().map(|(_, t)| t).collect()
    }

    /// Exact number of trainable scalars.
    fn count_params(&self) -> usize {
        self.named_params("").iter().map(|(_, t)| t.numel()).sum()
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_owned()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Stacks images into a `[B, 3, H, W]` tensor scaled to `[-1, 1]`.
pub fn rgb_batch(images: &[&RgbImage]) -> Result<Tensor> {
    let first = images.first().ok_or(Error::EmptyDataset)?;
    let (w, h) = (first.width(), first.height());
    let plane = w * h;
    let mut data = vec![0.0f32; images.len() * 3 * plane];
    for (i, img) in images.iter().enumerate() {
        if (img.width(), img.height()) != (w, h) {
            return Err(Error::Shape(format!(
                "batch mixes {w}x{h} and {}x{} images",
                img.width(),
                img.height()
            )));
        }
        let out = &mut data[i * 3 * plane..(i + 1) * 3 * plane];
        for (p, px) in img.data().chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + p] = px[c] as f32 / 127.5 - 1.0;
            }
        }
    }
    Tensor::new(&[images.len(), 3, h, w], data)
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Zero-mean normal with the given standard deviation.
    Normal(f32),
    /// Uniform in `±sqrt(6 / fan_in)`.
    HeUniform,
}

fn init_tensor<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, init: Init, rng: &mut R) -> Tensor {
    match init {
        Init::Normal(std) => Tensor::randn(shape, std, rng).to_param(),
        Init::HeUniform => {
            let bound = (6.0 / fan_in as f32).sqrt();
            Tensor::uniform(shape, -bound, bound, rng).to_param()
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub spec: ConvSpec,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(
        cin: usize,
        cout: usize,
        kernel: usize,
        spec: ConvSpec,
        bias: bool,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let weight = init_tensor(&[cout, cin, kernel, kernel], cin * kernel * kernel, init, rng);
        let bias = bias.then(|| Tensor::zeros(&[cout]).to_param());
        Self { weight, bias, spec }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d(x, &self.weight, self.bias.as_ref(), self.spec)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn map(&self, f: &dyn Fn(&Tensor) -> Tensor) -> Self {
        Self {
            weight: f(&self.weight),
            bias: self.bias.as_ref().map(f),
            spec: self.spec,
        }
    }
}

impl Module for Conv2d {
    fn named_params(&self, prefix: &str) -> NamedParams {
        let mut out = vec![(join(prefix, "weight"), self.weight.clone())];
        if let Some(b) = &self.bias {
            out.push((join(prefix, "bias"), b.clone()));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    /// `[Cin, Cout, k, k]`
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub spec: ConvSpec,
}

impl ConvTranspose2d {
    pub fn new<R: Rng + ?Sized>(
        cin: usize,
        cout: usize,
        kernel: usize,
        spec: ConvSpec,
        bias: bool,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let weight = init_tensor(&[cin, cout, kernel, kernel], cin * kernel * kernel, init, rng);
        let bias = bias.then(|| Tensor::zeros(&[cout]).to_param());
        Self { weight, bias, spec }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv_transpose2d(x, &self.weight, self.bias.as_ref(), self.spec)
    }

    pub fn map(&self, f: &dyn Fn(&Tensor) -> Tensor) -> Self {
        Self {
            weight: f(&self.weight),
            bias: self.bias.as_ref().map(f),
            spec: self.spec,
        }
    }
}

impl Module for ConvTranspose2d {
    fn named_params(&self, prefix: &str) -> NamedParams {
        let mut out = vec![(join(prefix, "weight"), self.weight.clone())];
        if let Some(b) = &self.bias {
            out.push((join(prefix, "bias"), b.clone()));
        }
        out
    }
}

/// Instance normalization, optionally with a learned per-channel affine.
#[derive(Debug, Clone)]
pub struct InstanceNorm {
    pub affine: Option<(Tensor, Tensor)>,
}

impl InstanceNorm {
    pub fn new(channels: usize, affine: bool) -> Self {
        Self {
            affine: affine.then(|| {
                (
                    Tensor::full(&[channels], 1.0).to_param(),
                    Tensor::zeros(&[channels]).to_param(),
                )
            }),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match &self.affine {
            Some((g, b)) => instance_norm2d(x, Some(g), Some(b), NORM_EPS),
            None => instance_norm2d(x, None, None, NORM_EPS),
        }
    }

    pub fn map(&self, f: &dyn Fn(&Tensor) -> Tensor) -> Self {
        Self {
            affine: self.affine.as_ref().map(|(g, b)| (f(g), f(b))),
        }
    }
}

impl Module for InstanceNorm {
    fn named_params(&self, prefix: &str) -> NamedParams {
        match &self.affine {
            Some((g, b)) => vec![(join(prefix, "gamma"), g.clone()), (join(prefix, "beta"), b.clone())],
            None => Vec::new(),
        }
    }
}

/// Batch normalization with running statistics for inference.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
    pub momentum: f32,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(&[channels], 1.0).to_param(),
            beta: Tensor::zeros(&[channels]).to_param(),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            momentum: 0.1,
        }
    }

    /// Batch statistics (and a running-average update) when `train`,
    /// running statistics otherwise.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        if !train {
            let (m, v) = (self.running_mean.to_vec(), self.running_var.to_vec());
            return Ok(batch_norm2d(x, &self.gamma, &self.beta, Some((&m, &v)), NORM_EPS)?.0);
        }
        let (y, mean, var) = batch_norm2d(x, &self.gamma, &self.beta, None, NORM_EPS)?;
        let s = x.shape();
        let n = (s[0] * s[2] * s[3]) as f32;
        let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        let k = self.momentum;
        self.running_mean
            .update_data(|r| r.iter_mut().zip(&mean).for_each(|(r, m)| *r = (1.0 - k) * *r + k * m));
        self.running_var
            .update_data(|r| r.iter_mut().zip(&var).for_each(|(r, v)| *r = (1.0 - k) * *r + k * v * unbias));
        Ok(y)
    }

    /// Parameters mapped through `f`; running statistics are copied.
    pub fn map(&self, f: &dyn Fn(&Tensor) -> Tensor) -> Self {
        Self {
            gamma: f(&self.gamma),
            beta: f(&self.beta),
            running_mean: Tensor::new(self.running_mean.shape(), self.running_mean.to_vec()).expect("same shape"),
            running_var: Tensor::new(self.running_var.shape(), self.running_var.to_vec()).expect("same shape"),
            momentum: self.momentum,
        }
    }
}

impl Module for BatchNorm {
    fn named_params(&self, prefix: &str) -> NamedParams {
        vec![(join(prefix, "gamma"), self.gamma.clone()), (join(prefix, "beta"), self.beta.clone())]
    }

    fn named_buffers(&self, prefix: &str) -> NamedParams {
        vec![
            (join(prefix, "running_mean"), self.running_mean.clone()),
            (join(prefix, "running_var"), self.running_var.clone()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conv_param_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = Conv2d::new(2, 4, 3, ConvSpec::new(1, 1), true, Init::HeUniform, &mut rng);
        assert_eq!(c.count_params(), 76);
    }

    #[test]
    fn frozen_copy_does_not_require_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = Conv2d::new(2, 4, 3, ConvSpec::new(1, 1), true, Init::HeUniform, &mut rng);
        let frozen = c.map(&Tensor::detach);
        assert!(frozen.params().iter().all(|p| !p.requires_grad()));
        assert_eq!(frozen.weight.to_vec(), c.weight.to_vec());
    }
}
