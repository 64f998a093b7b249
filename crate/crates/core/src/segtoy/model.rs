//! Small fully convolutional segmenter.
//!
//! ```text
//! conv1 (3x3, s1) -> stage1 (2 convs, s2) -> stage2 (2 convs, s2) -> stage3 -> 1x1 head -> bilinear x4
//! ```
//!
//! Every convolution is followed by batch norm and ReLU. `conv1` is the real
//! feature extractor F; a frozen generator may be inserted after conv1,
//! stage1 or stage2.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featuregan::{FeatureGanBundle, Generator, GeneratorConfig};
use crate::harness::Checkpoint;
use crate::nn::{join, BatchNorm, Conv2d, Init, Module, NamedParams};
use crate::tensor::{relu, upsample_bilinear, ConvSpec, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenPosition {
    None,
    AfterConv1,
    AfterStage1,
    AfterStage2,
}

impl GenPosition {
    pub const PLUGGABLE: [Self; 3] = [Self::AfterConv1, Self::AfterStage1, Self::AfterStage2];

    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::AfterConv1 => "after_conv1",
            Self::AfterStage1 => "after_stage1",
            Self::AfterStage2 => "after_stage2",
        }
    }

    fn depth(self) -> usize {
        match self {
            Self::None => usize::MAX,
            Self::AfterConv1 => 0,
            Self::AfterStage1 => 1,
            Self::AfterStage2 => 2,
        }
    }
}

impl FromStr for GenPosition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Self::None, Self::AfterConv1, Self::AfterStage1, Self::AfterStage2]
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown generator position '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterConfig {
    pub classes: usize,
    /// Channels of conv1, stage1 and stage2/3.
    pub widths: [usize; 3],
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            classes: super::DEFAULT_CLASSES,
            widths: [8, 16, 32],
        }
    }
}

impl SegmenterConfig {
    /// Feature channels at a generator position.
    pub fn channels_at(&self, pos: GenPosition) -> Option<usize> {
        match pos {
            GenPosition::None => None,
            GenPosition::AfterConv1 => Some(self.widths[0]),
            GenPosition::AfterStage1 => Some(self.widths[1]),
            GenPosition::AfterStage2 => Some(self.widths[2]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.classes > 255 {
            return Err(Error::Config(format!("segmenter needs 2..=255 classes, got {}", self.classes)));
        }
        if self.widths.contains(&0) {
            return Err(Error::Config("segmenter widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct ConvBn {
    conv: Conv2d,
    bn: BatchNorm,
}

impl ConvBn {
    fn new<R: Rng + ?Sized>(cin: usize, cout: usize, stride: usize, rng: &mut R) -> Self {
        Self {
            conv: Conv2d::new(cin, cout, 3, ConvSpec::new(stride, 1), false, Init::HeUniform, rng),
            bn: BatchNorm::new(cout),
        }
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        Ok(relu(&self.bn.forward(&self.conv.forward(x)?, train)?))
    }

    fn map(&self, f: &dyn Fn(&Tensor) -> Tensor) -> Self {
        Self {
            conv: self.conv.map(f),
            bn: self.bn.map(f),
        }
    }
}

impl Module for ConvBn {
    fn named_params(&self, prefix: &str) -> NamedParams {
        let mut p = self.conv.named_params(&join(prefix, "conv"));
        p.extend(self.bn.named_params(&join(prefix, "bn")));
        p
    }

    fn named_buffers(&self, prefix: &str) -> NamedParams {
        self.bn.named_buffers(&join(prefix, "bn"))
    }
}

#[derive(Debug, Clone)]
pub struct Segmenter {
    cfg: SegmenterConfig,
    /// Stages in order: conv1, stage1, stage2, stage3.
    stages: [Vec<ConvBn>; 4],
    head: Conv2d,
    position: GenPosition,
    generator: Option<Generator>,
}

impl Segmenter {
    pub fn new<R: Rng + ?Sized>(cfg: SegmenterConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let [w1, w2, w3] = cfg.widths;
        let stages = [
            vec![ConvBn::new(3, w1, 1, rng)],
            vec![ConvBn::new(w1, w2, 2, rng), ConvBn::new(w2, w2, 1, rng)],
            vec![ConvBn::new(w2, w3, 2, rng), ConvBn::new(w3, w3, 1, rng)],
            vec![ConvBn::new(w3, w3, 1, rng)],
        ];
        let head = Conv2d::new(w3, cfg.classes, 1, ConvSpec::new(1, 0), true, Init::HeUniform, rng);
        Ok(Self {
            cfg,
            stages,
            head,
            position: GenPosition::None,
            generator: None,
        })
    }

    /// Inserts a frozen copy of `g` at `position`.
    pub fn with_generator(mut self, position: GenPosition, g: &Generator) -> Result<Self> {
        let want = self
            .cfg
            .channels_at(position)
            .ok_or_else(|| Error::Config("a generator needs a position other than none".into()))?;
        if g.config().in_channels != want {
            return Err(Error::Shape(format!(
                "generator works on {} channels but features {} have {want}",
                g.config().in_channels,
                position.name()
            )));
        }
        self.position = position;
        self.generator = Some(g.frozen());
        Ok(self)
    }

    pub fn config(&self) -> &SegmenterConfig {
        &self.cfg
    }

    pub fn position(&self) -> GenPosition {
        self.position
    }

    pub fn generator(&self) -> Option<&Generator> {
        self.generator.as_ref()
    }

    fn run_stage(&self, i: usize, mut x: Tensor, train: bool) -> Result<Tensor> {
        for block in &self.stages[i] {
            x = block.forward(&x, train)?;
        }
        if let Some(g) = &self.generator {
            if self.position.depth() == i {
                x = g.forward(&x)?;
            }
        }
        Ok(x)
    }

    /// Logits `[B, K, H, W]` at input resolution. `train` selects batch
    /// statistics (and updates running averages) in batch norm.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let &[_, c, h, w] = x.shape() else {
            return Err(Error::Shape(format!("segmenter input must be 4-D, got {:?}", x.shape())));
        };
        if c != 3 {
            return Err(Error::Shape(format!("segmenter expects 3 input channels, got {c}")));
        }
        let mut y = x.clone();
        for i in 0..4 {
            y = self.run_stage(i, y, train)?;
        }
        upsample_bilinear(&self.head.forward(&y)?, h, w)
    }

    /// Inference-mode features at `position` (before any plugged
    /// generator), the "real" samples for FeatureGAN training.
    pub fn extract(&self, x: &Tensor, position: GenPosition) -> Result<Tensor> {
        if position == GenPosition::None {
            return Err(Error::Config("feature position must not be none".into()));
        }
        let mut y = x.clone();
        for i in 0..=position.depth() {
            for block in &self.stages[i] {
                y = block.forward(&y, false)?;
            }
        }
        Ok(y)
    }

    /// Copy with every parameter detached, so nothing can train it.
    pub fn frozen(&self) -> Self {
        self.map(&Tensor::detach)
    }

    fn map(&self, f: &dyn Fn(&Tensor) -> Tensor) -> Self {
        Self {
            cfg: self.cfg.clone(),
            stages: self.stages.clone().map(|s| s.iter().map(|b| b.map(f)).collect()),
            head: self.head.map(f),
            position: self.position,
            generator: self.generator.clone(),
        }
    }

    pub fn to_checkpoint(&self, config_hash: u64, seed: u64, step: u64) -> Result<Checkpoint> {
        let mut c = Checkpoint::new(config_hash, seed, step);
        c.extra = serde_json::json!({
            "segmenter": serde_json::to_value(&self.cfg)?,
            "position": self.position,
            "generator": self.generator.as_ref().map(|g| *g.config()),
        });
        c.push_module("seg", self);
        if let Some(g) = &self.generator {
            c.push_module("generator", g);
        }
        Ok(c)
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let field = |k: &str| {
            c.extra
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("segmenter checkpoint lacks '{k}'")))
        };
        let cfg: SegmenterConfig = serde_json::from_value(field("segmenter")?)?;
        let position: GenPosition = serde_json::from_value(field("position")?)?;
        let gcfg: Option<GeneratorConfig> = serde_json::from_value(field("generator")?)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut seg = Self::new(cfg, &mut rng)?;
        c.load_module("seg", &seg)?;
        if let Some(gcfg) = gcfg {
            let g = Generator::new(gcfg, &mut rng)?;
            c.load_module("generator", &g)?;
            seg = seg.with_generator(position, &g)?;
        }
        Ok(seg)
    }

    /// Plugs the `G_AB` generator of a FeatureGAN checkpoint.
    pub fn with_bundle_generator(self, position: GenPosition, bundle: &Checkpoint) -> Result<Self> {
        let g = FeatureGanBundle::load_generator(bundle)?;
        self.with_generator(position, &g)
    }
}

impl Module for Segmenter {
    /// Trainable parameters only; a plugged generator is frozen and excluded.
    fn named_params(&self, prefix: &str) -> NamedParams {
        let mut p = Vec::new();
        for (i, stage) in self.stages.iter().enumerate() {
            for (j, b) in stage.iter().enumerate() {
                p.extend(b.named_params(&join(prefix, &format!("s{i}.{j}"))));
            }
        }
        p.extend(self.head.named_params(&join(prefix, "head")));
        p
    }

    fn named_buffers(&self, prefix: &str) -> NamedParams {
        let mut p = Vec::new();
        for (i, stage) in self.stages.iter().enumerate() {
            for (j, b) in stage.iter().enumerate() {
                p.extend(b.named_buffers(&join(prefix, &format!("s{i}.{j}"))));
            }
        }
        p
    }
}
