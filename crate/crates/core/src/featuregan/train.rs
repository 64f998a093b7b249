//! Step-2 training: two RICA restylings of each batch are pushed through the
//! frozen extractor, and the two generators learn to translate between them.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use crate::colorlab::{derive_seed, rica_augment, RgbImage, RicaRanges};
use crate::error::{Error, Result};
use crate::harness::{Checkpoint, NamedArray};
use crate::losses::{kl_cycle_loss, lsgan_d_loss, lsgan_g_loss, DEFAULT_LAMBDA_CYC};
use crate::nn::{rgb_batch, Module};
use crate::tensor::optim::Adam;
use crate::tensor::Tensor;

pub const LOSS_CSV_HEADER: &str = "step,loss_d_a,loss_d_b,loss_g_adv,loss_cyc";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureGanConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub batch_size: usize,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub lambda_cyc: f32,
    pub epochs: usize,
    /// Stops early once this many optimizer steps have run.
    pub max_steps: Option<usize>,
}

impl Default for FeatureGanConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::full(),
            discriminator: DiscriminatorConfig::full(),
            batch_size: 1,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            lambda_cyc: DEFAULT_LAMBDA_CYC,
            epochs: 1,
            max_steps: None,
        }
    }
}

impl FeatureGanConfig {
    /// Reduced networks for `channels`-wide features.
    pub fn tiny(channels: usize) -> Self {
        Self {
            generator: GeneratorConfig::tiny(channels, 8, 2),
            discriminator: DiscriminatorConfig::tiny(channels, 8),
            batch_size: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        if self.generator.in_channels != self.discriminator.in_channels {
            return Err(Error::Config(format!(
                "generator works on {} channels but discriminator expects {}",
                self.generator.in_channels, self.discriminator.in_channels
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lambda_cyc >= 0.0) {
            return Err(Error::Config("lr must be positive and lambda_cyc non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanLogRow {
    pub step: usize,
    pub loss_d_a: f32,
    pub loss_d_b: f32,
    pub loss_g_adv: f32,
    pub loss_cyc: f32,
}

pub fn write_loss_csv<W: Write>(out: W, rows: &[GanLogRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LOSS_CSV_HEADER.split(','))?;
    for r in rows {
        w.write_record(&[
            r.step.to_string(),
            r.loss_d_a.to_string(),
            r.loss_d_b.to_string(),
            r.loss_g_adv.to_string(),
            r.loss_cyc.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Two generators, two discriminators and their optimizers.
pub struct FeatureGanBundle {
    pub cfg: FeatureGanConfig,
    pub g_ab: Generator,
    pub g_ba: Generator,
    pub d_a: Discriminator,
    pub d_b: Discriminator,
    opt_g: Adam,
    opt_d: Adam,
    pub step: u64,
    pub seed: u64,
}

impl FeatureGanBundle {
    pub fn new(cfg: FeatureGanConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g_ab = Generator::new(cfg.generator, &mut rng)?;
        let g_ba = Generator::new(cfg.generator, &mut rng)?;
        let d_a = Discriminator::new(cfg.discriminator.clone(), &mut rng)?;
        let d_b = Discriminator::new(cfg.discriminator.clone(), &mut rng)?;
        let mut gp = g_ab.params();
        gp.extend(g_ba.params());
        let mut dp = d_a.params();
        dp.extend(d_b.params());
        let opt_g = Adam::new(gp, cfg.lr, cfg.beta1, cfg.beta2);
        let opt_d = Adam::new(dp, cfg.lr, cfg.beta1, cfg.beta2);
        Ok(Self {
            cfg,
            g_ab,
            g_ba,
            d_a,
            d_b,
            opt_g,
            opt_d,
            step: 0,
            seed,
        })
    }

    pub fn to_checkpoint(&self, config_hash: u64) -> Result<Checkpoint> {
        let mut c = Checkpoint::new(config_hash, self.seed, self.step);
        c.extra = serde_json::json!({ "featuregan": serde_json::to_value(&self.cfg)? });
        c.push_module("g_ab", &self.g_ab);
        c.push_module("g_ba", &self.g_ba);
        c.push_module("d_a", &self.d_a);
        c.push_module("d_b", &self.d_b);
        for (tag, opt) in [("opt_g", &self.opt_g), ("opt_d", &self.opt_d)] {
            let (m, v) = opt.moments();
            for (kind, bufs) in [("m", m), ("v", v)] {
                for (i, b) in bufs.iter().enumerate() {
                    c.push(NamedArray {
                        name: format!("{tag}.{kind}.{i}"),
                        shape: vec![b.len()],
                        data: b.clone(),
                    });
                }
            }
        }
        Ok(c)
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let cfg: FeatureGanConfig = serde_json::from_value(
            c.extra
                .get("featuregan")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("no featuregan config in checkpoint".into()))?,
        )?;
        let mut b = Self::new(cfg, c.seed)?;
        c.load_module("g_ab", &b.g_ab)?;
        c.load_module("g_ba", &b.g_ba)?;
        c.load_module("d_a", &b.d_a)?;
        c.load_module("d_b", &b.d_b)?;
        b.step = c.step;
        for (tag, opt) in [("opt_g", &mut b.opt_g), ("opt_d", &mut b.opt_d)] {
            let n = opt.moments().0.len();
            let fetch = |kind: &str| -> Result<Vec<Vec<f32>>> {
                (0..n)
                    .map(|i| {
                        let name = format!("{tag}.{kind}.{i}");
                        c.get(&name)
                            .map(|a| a.data.clone())
                            .ok_or_else(|| Error::Checkpoint(format!("missing array '{name}'")))
                    })
                    .collect()
            };
            let (m, v) = (fetch("m")?, fetch("v")?);
            opt.restore(c.step, m, v);
        }
        Ok(b)
    }

    /// Loads only the `G_AB` generator from a bundle checkpoint.
    pub fn load_generator(c: &Checkpoint) -> Result<Generator> {
        let cfg: FeatureGanConfig = serde_json::from_value(
            c.extra
                .get("featuregan")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("no featuregan config in checkpoint".into()))?,
        )?;
        let g = Generator::new(cfg.generator, &mut ChaCha8Rng::seed_from_u64(0))?;
        c.load_module("g_ab", &g)?;
        Ok(g)
    }

    /// One generator update followed by one discriminator update.
    fn train_step(&mut self, f_a: &Tensor, f_b: &Tensor) -> Result<GanLogRow> {
        let fake_b = self.g_ab.forward(f_a)?;
        let fake_a = self.g_ba.forward(f_b)?;
        let rec_a = self.g_ba.forward(&fake_b)?;
        let rec_b = self.g_ab.forward(&fake_a)?;
        let adv = lsgan_g_loss(&self.d_b.forward(&fake_b)?).plus(&lsgan_g_loss(&self.d_a.forward(&fake_a)?));
        let cyc = kl_cycle_loss(&rec_a, f_a)?.plus(&kl_cycle_loss(&rec_b, f_b)?);
        adv.ensure_finite("loss_g_adv")?;
        cyc.ensure_finite("loss_cyc")?;
        let total = adv.plus(&cyc.scaled(self.cfg.lambda_cyc));
        self.opt_g.zero_grad();
        total.backward()?;
        self.opt_g.step();

        let (fake_a, fake_b) = (fake_a.detach(), fake_b.detach());
        let d_a = lsgan_d_loss(&self.d_a.forward(f_a)?, &self.d_a.forward(&fake_a)?);
        let d_b = lsgan_d_loss(&self.d_b.forward(f_b)?, &self.d_b.forward(&fake_b)?);
        d_a.ensure_finite("loss_d_a")?;
        d_b.ensure_finite("loss_d_b")?;
        self.opt_d.zero_grad();
        d_a.plus(&d_b).backward()?;
        self.opt_d.step();

        self.step += 1;
        Ok(GanLogRow {
            step: self.step as usize,
            loss_d_a: d_a.value(),
            loss_d_b: d_b.value(),
            loss_g_adv: adv.value(),
            loss_cyc: cyc.value(),
        })
    }
}

/// Restyles every image of a batch with its own RICA draw.
fn restyle(images: &[&RgbImage], ranges: &RicaRanges, seed: u64, first: u64) -> Result<Vec<RgbImage>> {
    images
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, first + i as u64));
            rica_augment(img, &mut rng, ranges).map(|(out, _)| out)
        })
        .collect()
}

/// Trains a fresh bundle against the frozen extractor `extract`, which maps a
/// `[B, 3, H, W]` image batch to features. Its output is detached, so no
/// gradient ever reaches the extractor.
pub fn train_featuregan(
    extract: &dyn Fn(&Tensor) -> Result<Tensor>,
    images: &[RgbImage],
    rica: &RicaRanges,
    cfg: &FeatureGanConfig,
    seed: u64,
) -> Result<(FeatureGanBundle, Vec<GanLogRow>)> {
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    rica.validate()?;
    // shrink the discriminator if its patch map would vanish on these features
    let probe = extract(&rgb_batch(&[&images[0]])?)?;
    let extent = probe.shape().get(2..4).map_or(0, |s| s[0].min(s[1]));
    let cfg = &FeatureGanConfig {
        discriminator: cfg.discriminator.clone().fit_to(extent),
        ..cfg.clone()
    };
    let mut bundle = FeatureGanBundle::new(cfg.clone(), seed)?;
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let style_seed = derive_seed(seed, 2);
    let max_steps = cfg.max_steps.unwrap_or(usize::MAX);
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..images.len()).collect();
    'outer: for _ in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(cfg.batch_size) {
            if log.len() >= max_steps {
                break 'outer;
            }
            let raw: Vec<&RgbImage> = chunk.iter().map(|&i| &images[i]).collect();
            let n = 2 * bundle.step * cfg.batch_size as u64;
            let style_a = restyle(&raw, rica, style_seed, n)?;
            let style_b = restyle(&raw, rica, style_seed, n + cfg.batch_size as u64)?;
            let f_a = extract(&rgb_batch(&style_a.iter().collect::<Vec<_>>())?)?.detach();
            let f_b = extract(&rgb_batch(&style_b.iter().collect::<Vec<_>>())?)?.detach();
            if f_a.shape().get(1) != Some(&cfg.generator.in_channels) {
                return Err(Error::Shape(format!(
                    "extractor yields {:?}, generator expects {} channels",
                    f_a.shape(),
                    cfg.generator.in_channels
                )));
            }
            log.push(bundle.train_step(&f_a, &f_b)?);
        }
    }
    Ok((bundle, log))
}

/// Applies a generator without touching its parameters.
pub fn hallucinate(g: &Generator, f: &Tensor) -> Result<Tensor> {
    Ok(g.forward(f)?.detach())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{conv2d, relu, ConvSpec};

    fn images(n: usize) -> Vec<RgbImage> {
        (0..n)
            .map(|i| {
                let data = (0..16 * 16 * 3).map(|j| ((i * 37 + j * 11) % 256) as u8).collect();
                RgbImage::from_raw(16, 16, data).unwrap()
            })
            .collect()
    }

    #[test]
    fn bundle_checkpoint_round_trip() {
        let b = FeatureGanBundle::new(FeatureGanConfig::tiny(4), 3).unwrap();
        let c = b.to_checkpoint(0).unwrap();
        let back = FeatureGanBundle::from_checkpoint(&c).unwrap();
        assert_eq!(back.to_checkpoint(0).unwrap().to_bytes().unwrap(), c.to_bytes().unwrap());
    }

    #[test]
    fn zero_epochs_is_initialization() {
        let w = Tensor::param(&[4, 3, 3, 3], vec![0.1; 108]).unwrap();
        let f = |x: &Tensor| Ok(relu(&conv2d(x, &w.detach(), None, ConvSpec::new(1, 1))?));
        let cfg = FeatureGanConfig { epochs: 0, ..FeatureGanConfig::tiny(4) };
        let (b, log) = train_featuregan(&f, &images(2), &RicaRanges::default(), &cfg, 5).unwrap();
        assert!(log.is_empty());
        let fresh = FeatureGanBundle::new(b.cfg.clone(), 5).unwrap();
        assert_eq!(b.to_checkpoint(0).unwrap(), fresh.to_checkpoint(0).unwrap());
    }

    #[test]
    fn one_step_leaves_extractor_untouched() {
        let w = Tensor::param(&[4, 3, 3, 3], (0..108).map(|i| (i as f32 * 0.37).sin() * 0.2).collect()).unwrap();
        let before = w.to_vec();
        let f = |x: &Tensor| Ok(relu(&conv2d(x, &w, None, ConvSpec::new(1, 1))?));
        let cfg = FeatureGanConfig { max_steps: Some(1), ..FeatureGanConfig::tiny(4) };
        let (_, log) = train_featuregan(&f, &images(4), &RicaRanges::default(), &cfg, 1).unwrap();
        assert_eq!(log.len(), 1);
        assert!(!w.has_grad());
        assert_eq!(w.to_vec(), before);
    }

    #[test]
    fn hallucinate_is_repeatable() {
        let b = FeatureGanBundle::new(FeatureGanConfig::tiny(8), 0).unwrap();
        let x = Tensor::randn(&[2, 8, 16, 16], 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        let y1 = hallucinate(&b.g_ab, &x).unwrap();
        let y2 = hallucinate(&b.g_ab, &x).unwrap();
        assert_eq!(y1.shape(), &[2, 8, 16, 16]);
        assert_eq!(y1.to_vec(), y2.to_vec());
        assert!(hallucinate(&b.g_ab, &Tensor::zeros(&[1, 4, 8, 8])).is_err());
    }
}
