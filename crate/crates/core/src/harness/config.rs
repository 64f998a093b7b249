//! Pipeline configuration (JSON).

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::colorlab::RicaRanges;
use crate::error::{Error, Result};
use crate::featuregan::{DiscriminatorConfig, FeatureGanConfig, GeneratorConfig, Scale};
use crate::losses::DEFAULT_LAMBDA_CYC;
use crate::segtoy::{GenPosition, SegTrainConfig, SegmenterConfig, DEFAULT_SIZE};

/// Which augmentations an ablation arm uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Baseline,
    RicaOnly,
    GbfaOnly,
    Full,
}

impl Mode {
    pub const ALL: [Self; 4] = [Self::Baseline, Self::RicaOnly, Self::GbfaOnly, Self::Full];

    pub fn name(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::RicaOnly => "rica-only",
            Self::GbfaOnly => "gbfa-only",
            Self::Full => "full",
        }
    }

    /// RICA in the segmenter batches of Steps 1 and 3.
    pub fn uses_rica(self) -> bool {
        matches!(self, Self::RicaOnly | Self::Full)
    }

    /// FeatureGAN training and a plugged generator in Step 3.
    pub fn uses_gbfa(self) -> bool {
        matches!(self, Self::GbfaOnly | Self::Full)
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode '{s}'")))
    }
}

/// A toy dataset: loaded from `dir` when given, otherwise generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub n: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

impl DataSpec {
    pub fn generated(n: usize, seed: u64) -> Self {
        Self { n, seed, dir: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub classes: usize,
    pub image_size: usize,
    pub train: DataSpec,
    pub source_test: DataSpec,
    pub target_test: DataSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            classes: crate::segtoy::DEFAULT_CLASSES,
            image_size: DEFAULT_SIZE,
            train: DataSpec::generated(200, 1),
            source_test: DataSpec::generated(100, 2),
            target_test: DataSpec::generated(100, 3),
        }
    }
}

/// Segmenter training settings for one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepConfig {
    pub seed: u64,
    #[serde(flatten)]
    pub train: SegTrainConfig,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            seed: 11,
            train: SegTrainConfig::default(),
        }
    }
}

/// FeatureGAN settings; the feature width comes from the generator position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanConfig {
    pub seed: u64,
    pub scale: Scale,
    pub base_width: usize,
    pub n_res_blocks: usize,
    /// Discriminator widths are the standard 64..512 divided by this.
    pub disc_width_divisor: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub lambda_cyc: f32,
    pub epochs: usize,
    pub max_steps: Option<usize>,
    /// Draw the Step-2 style pairs with RICA even when the mode trains
    /// Steps 1 and 3 without it.
    pub rica_style_pairs: bool,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            seed: 21,
            scale: Scale::Tiny,
            base_width: 8,
            n_res_blocks: 2,
            disc_width_divisor: 8,
            batch_size: 4,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            lambda_cyc: DEFAULT_LAMBDA_CYC,
            epochs: 1,
            max_steps: Some(200),
            rica_style_pairs: true,
        }
    }
}

impl GanConfig {
    pub fn for_channels(&self, channels: usize) -> FeatureGanConfig {
        let (generator, discriminator) = match self.scale {
            Scale::Full => (GeneratorConfig::full(), DiscriminatorConfig::full()),
            Scale::Tiny => (
                GeneratorConfig::tiny(channels, self.base_width, self.n_res_blocks),
                DiscriminatorConfig::tiny(channels, self.disc_width_divisor),
            ),
        };
        FeatureGanConfig {
            generator,
            discriminator,
            batch_size: self.batch_size,
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            lambda_cyc: self.lambda_cyc,
            epochs: self.epochs,
            max_steps: self.max_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub mode: Mode,
    /// Generator positions; Steps 2 and 3 run once per entry.
    pub positions: Vec<GenPosition>,
    pub data: DataConfig,
    pub rica: RicaRanges,
    pub segmenter: SegmenterConfig,
    pub step1: StepConfig,
    pub step2: GanConfig,
    pub step3: StepConfig,
    /// Start Step 3 from a fresh initialization rather than Step-1 weights.
    pub step3_reinit: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Full,
            positions: vec![GenPosition::AfterConv1],
            data: DataConfig::default(),
            rica: RicaRanges::default(),
            segmenter: SegmenterConfig::default(),
            step1: StepConfig::default(),
            step2: GanConfig::default(),
            step3: StepConfig {
                seed: 31,
                ..StepConfig::default()
            },
            step3_reinit: true,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        use crate::error::IoContext;
        Self::from_json(&std::fs::read_to_string(path).at(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.segmenter.validate()?;
        self.rica.validate()?;
        self.step1.train.validate()?;
        self.step3.train.validate()?;
        if self.segmenter.classes != self.data.classes {
            return Err(Error::Config(format!(
                "segmenter predicts {} classes but data has {}",
                self.segmenter.classes, self.data.classes
            )));
        }
        if self.mode.uses_gbfa() {
            if self.positions.is_empty() {
                return Err(Error::Config(format!("mode {} needs at least one generator position", self.mode.name())));
            }
            if self.positions.contains(&GenPosition::None) {
                return Err(Error::Config("generator position 'none' cannot host a generator".into()));
            }
            let mut seen = self.positions.clone();
            seen.sort_by_key(|p| p.name());
            seen.dedup();
            if seen.len() != self.positions.len() {
                return Err(Error::Config("generator positions repeat".into()));
            }
            if !self.step2.rica_style_pairs {
                return Err(Error::Config(
                    "Step 2 needs two styles of each image and RICA is the only style source; \
                     set step2.rica_style_pairs to true"
                        .into(),
                ));
            }
            for &p in &self.positions {
                let ch = self.segmenter.channels_at(p).expect("position checked");
                self.step2.for_channels(ch).validate()?;
            }
        }
        Ok(())
    }

    /// Positions that actually get a generator under the current mode.
    pub fn active_positions(&self) -> &[GenPosition] {
        if self.mode.uses_gbfa() {
            &self.positions
        } else {
            &[]
        }
    }
}
