//! Feature-space generator and patch discriminator.
//!
//! The generator is the CycleGAN residual generator without its image-space
//! stem and output convolutions: two stride-2 downsampling convolutions, a
//! stack of residual blocks, and two stride-2 transposed convolutions back to
//! the input width. The discriminator is the 70x70 patch discriminator applied
//! to feature maps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{join, Conv2d, ConvTranspose2d, Init, InstanceNorm, Module, NamedParams, NORM_EPS};
use crate::tensor::{add, crop2d, instance_norm2d, leaky_relu, pad2d, relu, ConvSpec, Tensor};

const INIT: Init = Init::Normal(0.02);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Full,
    Tiny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub in_channels: usize,
    pub base_width: usize,
    pub n_res_blocks: usize,
    pub scale: Scale,
}

impl GeneratorConfig {
    pub const fn full() -> Self {
        Self {
            in_channels: 64,
            base_width: 64,
            n_res_blocks: 9,
            scale: Scale::Full,
        }
    }

    pub const fn tiny(in_channels: usize, base_width: usize, n_res_blocks: usize) -> Self {
        Self {
            in_channels,
            base_width,
            n_res_blocks,
            scale: Scale::Tiny,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.base_width == 0 {
            return Err(Error::Config("generator widths must be positive".into()));
        }
        match self.scale {
            Scale::Full if (self.in_channels, self.base_width, self.n_res_blocks) != (64, 64, 9) => Err(
                Error::Config("full-scale generator is 64 channels wide with 9 residual blocks".into()),
            ),
            Scale::Tiny if self.base_width > 16 || self.n_res_blocks > 3 => Err(Error::Config(
                "tiny generator needs base_width <= 16 and at most 3 residual blocks".into(),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub in_channels: usize,
    /// Widths of the hidden layers; all but the last use stride 2.
    pub widths: Vec<usize>,
}

impl DiscriminatorConfig {
    pub fn full() -> Self {
        Self {
            in_channels: 64,
            widths: vec![64, 128, 256, 512],
        }
    }

    /// Hidden widths divided by `factor`.
    pub fn tiny(in_channels: usize, factor: usize) -> Self {
        Self {
            in_channels,
            widths: [64, 128, 256, 512].iter().map(|w| (w / factor).max(1)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config("discriminator widths must be positive and non-empty".into()));
        }
        Ok(())
    }

    /// Spatial extent of the patch map for an input extent.
    pub fn output_extent(&self, extent: usize) -> usize {
        let mut e = extent as isize;
        let n = self.widths.len();
        for i in 0..=n {
            let stride = if i + 1 < n { 2 } else { 1 };
            e = (e + 2 - 4) / stride + 1;
        }
        e.max(0) as usize
    }

    /// Drops stride-2 layers until the patch map is at least 2x2.
    pub fn fit_to(mut self, extent: usize) -> Self {
        while self.widths.len() > 1 && self.output_extent(extent) < 2 {
            self.widths.remove(self.widths.len() - 2);
        }
        self
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    conv1: Conv2d,
    norm1: InstanceNorm,
    conv2: Conv2d,
    norm2: InstanceNorm,
}

impl ResBlock {
    fn new<R: Rng + ?Sized>(width: usize, rng: &mut R) -> Self {
        let spec = ConvSpec::new(1, 1);
        Self {
            conv1: Conv2d::new(width, width, 3, spec, true, INIT, rng),
            norm1: InstanceNorm::new(width, false),
            conv2: Conv2d::new(width, width, 3, spec, true, INIT, rng),
            norm2: InstanceNorm::new(width, false),
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = relu(&self.norm1.forward(&self.conv1.forward(x)?)?);
        let h = self.norm2.forward(&self.conv2.forward(&h)?)?;
        add(x, &h)
    }

    fn map(&self, f: &dyn Fn(&Tensor) -> Tensor) -> Self {
        Self {
            conv1: self.conv1.map(f),
            norm1: self.norm1.map(f),
            conv2: self.conv2.map(f),
            norm2: self.norm2.map(f),
        }
    }
}

impl Module for ResBlock {
    fn named_params(&self, prefix: &str) -> NamedParams {
        let mut p = self.conv1.named_params(&join(prefix, "conv1"));
        p.extend(self.conv2.named_params(&join(prefix, "conv2")));
        p
    }
}

/// Feature-to-feature generator; output shape equals input shape.
#[derive(Debug, Clone)]
pub struct Generator {
    cfg: GeneratorConfig,
    down1: Conv2d,
    down2: Conv2d,
    blocks: Vec<ResBlock>,
    up1: ConvTranspose2d,
    up2: ConvTranspose2d,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(cfg: GeneratorConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let b = cfg.base_width;
        let down = ConvSpec::new(2, 1);
        let up = ConvSpec::new(2, 1).with_output_padding(1);
        Ok(Self {
            cfg,
            down1: Conv2d::new(cfg.in_channels, 2 * b, 3, down, true, INIT, rng),
            down2: Conv2d::new(2 * b, 4 * b, 3, down, true, INIT, rng),
            blocks: (0..cfg.n_res_blocks).map(|_| ResBlock::new(4 * b, rng)).collect(),
            up1: ConvTranspose2d::new(4 * b, 2 * b, 3, up, true, INIT, rng),
            up2: ConvTranspose2d::new(2 * b, cfg.in_channels, 3, up, true, INIT, rng),
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let &[_, c, h, w] = x.shape() else {
            return Err(Error::Shape(format!("generator input must be 4-D, got {:?}", x.shape())));
        };
        if c != self.cfg.in_channels {
            return Err(Error::Shape(format!(
                "generator expects {} channels, got {c}",
                self.cfg.in_channels
            )));
        }
        // symmetric zero padding up to a multiple of 4, cropped afterwards
        let (ph, pw) = (h.next_multiple_of(4) - h, w.next_multiple_of(4) - w);
        let (top, left) = (ph / 2, pw / 2);
        let x = pad2d(x, [top, ph - top, left, pw - left])?;
        let norm = |t: Tensor| -> Result<Tensor> { Ok(relu(&instance_norm2d(&t, None, None, NORM_EPS)?)) };
        let mut y = norm(self.down1.forward(&x)?)?;
        y = norm(self.down2.forward(&y)?)?;
        for block in &self.blocks {
            y = block.forward(&y)?;
        }
        y = norm(self.up1.forward(&y)?)?;
        y = norm(self.up2.forward(&y)?)?;
        crop2d(&y, top, left, h, w)
    }

    /// Copy whose parameters never receive gradients.
    pub fn frozen(&self) -> Self {
        self.map(&Tensor::detach)
    }

    fn map(&self, f: &dyn Fn(&Tensor) -> Tensor) -> Self {
        Self {
            cfg: self.cfg,
            down1: self.down1.map(f),
            down2: self.down2.map(f),
            blocks: self.blocks.iter().map(|b| b.map(f)).collect(),
            up1: self.up1.map(f),
            up2: self.up2.map(f),
        }
    }
}

impl Module for Generator {
    fn named_params(&self, prefix: &str) -> NamedParams {
        let mut p = self.down1.named_params(&join(prefix, "down1"));
        p.extend(self.down2.named_params(&join(prefix, "down2")));
        for (i, b) in self.blocks.iter().enumerate() {
            p.extend(b.named_params(&join(prefix, &format!("res{i}"))));
        }
        p.extend(self.up1.named_params(&join(prefix, "up1")));
        p.extend(self.up2.named_params(&join(prefix, "up2")));
        p
    }
}

/// Patch discriminator: 4x4 convolutions, leaky ReLU 0.2, instance norm on
/// every hidden layer but the first, one score per patch.
#[derive(Debug, Clone)]
pub struct Discriminator {
    cfg: DiscriminatorConfig,
    layers: Vec<(Conv2d, Option<InstanceNorm>)>,
    out: Conv2d,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(cfg: DiscriminatorConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.widths.len();
        let mut layers = Vec::with_capacity(n);
        let mut cin = cfg.in_channels;
        for (i, &w) in cfg.widths.iter().enumerate() {
            let stride = if i + 1 < n { 2 } else { 1 };
            let conv = Conv2d::new(cin, w, 4, ConvSpec::new(stride, 1), true, INIT, rng);
            let norm = (i > 0).then(|| InstanceNorm::new(w, false));
            layers.push((conv, norm));
            cin = w;
        }
        let out = Conv2d::new(cin, 1, 4, ConvSpec::new(1, 1), true, INIT, rng);
        Ok(Self { cfg, layers, out })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = x.clone();
        for (conv, norm) in &self.layers {
            y = conv.forward(&y)?;
            if let Some(n) = norm {
                y = n.forward(&y)?;
            }
            y = leaky_relu(&y, 0.2);
        }
        self.out.forward(&y)
    }
}

impl Module for Discriminator {
    fn named_params(&self, prefix: &str) -> NamedParams {
        let mut p = Vec::new();
        for (i, (conv, _)) in self.layers.iter().enumerate() {
            p.extend(conv.named_params(&join(prefix, &format!("conv{i}"))));
        }
        p.extend(self.out.named_params(&join(prefix, "out")));
        p
    }
}

/// Closed-form parameter count of a generator configuration.
pub fn generator_param_formula(cfg: &GeneratorConfig) -> usize {
    let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k + cout;
    let (c, b) = (cfg.in_channels, cfg.base_width);
    conv(c, 2 * b, 3)
        + conv(2 * b, 4 * b, 3)
        + cfg.n_res_blocks * 2 * conv(4 * b, 4 * b, 3)
        + conv(4 * b, 2 * b, 3)
        + conv(2 * b, c, 3)
}

/// Closed-form parameter count of a discriminator configuration.
pub fn discriminator_param_formula(cfg: &DiscriminatorConfig) -> usize {
    let mut total = 0;
    let mut cin = cfg.in_channels;
    for &w in &cfg.widths {
        total += cin * w * 16 + w;
        cin = w;
    }
    total + cin * 16 + 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tiny_counts_match_hand_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = Generator::new(GeneratorConfig::tiny(8, 8, 2), &mut rng).unwrap();
        // d16: 8*16*9+16, d32: 16*32*9+32, 4 x (32*32*9+32), u16: 32*16*9+16, u8: 16*8*9+8
        let hand = 1168 + 4640 + 4 * 9248 + 4624 + 1160;
        assert_eq!(g.count_params(), hand);
        assert_eq!(generator_param_formula(g.config()), hand);

        let d = Discriminator::new(DiscriminatorConfig::tiny(8, 8), &mut rng).unwrap();
        // widths 8,16,32,64 then 1
        let hand = (8 * 8 * 16 + 8) + (8 * 16 * 16 + 16) + (16 * 32 * 16 + 32) + (32 * 64 * 16 + 64) + (64 * 16 + 1);
        assert_eq!(d.count_params(), hand);
    }

    #[test]
    fn full_scale_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = Generator::new(GeneratorConfig::full(), &mut rng).unwrap();
        assert_eq!(g.count_params(), 11_359_296);
        let d = Discriminator::new(DiscriminatorConfig::full(), &mut rng).unwrap();
        assert_eq!(d.count_params(), 2_827_201);
    }

    #[test]
    fn shape_is_preserved_for_odd_extents() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Generator::new(GeneratorConfig::tiny(4, 4, 1), &mut rng).unwrap();
        for (h, w) in [(16, 16), (7, 9), (5, 5), (1, 3)] {
            let x = Tensor::randn(&[2, 4, h, w], 1.0, &mut rng);
            assert_eq!(g.forward(&x).unwrap().shape(), &[2, 4, h, w]);
        }
    }

    #[test]
    fn zero_input_gives_finite_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = Generator::new(GeneratorConfig::tiny(8, 8, 2), &mut rng).unwrap();
        let y = g.forward(&Tensor::zeros(&[1, 8, 8, 8])).unwrap();
        assert!(y.to_vec().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Generator::new(GeneratorConfig::tiny(8, 8, 1), &mut rng).unwrap();
        assert!(g.forward(&Tensor::zeros(&[1, 4, 8, 8])).is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(Generator::new(GeneratorConfig::tiny(0, 8, 1), &mut rng).is_err());
        assert!(Generator::new(GeneratorConfig::tiny(8, 32, 1), &mut rng).is_err());
        assert!(Discriminator::new(DiscriminatorConfig { in_channels: 8, widths: vec![] }, &mut rng).is_err());
    }

    #[test]
    fn discriminator_emits_patch_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = DiscriminatorConfig::tiny(8, 8);
        let d = Discriminator::new(cfg.clone(), &mut rng).unwrap();
        let y = d.forward(&Tensor::randn(&[2, 8, 64, 64], 1.0, &mut rng)).unwrap();
        // 64 -> 32 -> 16 -> 8 -> 7 -> 6
        assert_eq!(y.shape(), &[2, 1, 6, 6]);
        assert_eq!(cfg.output_extent(64), 6);
        let small = cfg.fit_to(8);
        assert!(small.output_extent(8) >= 2);
    }
}
