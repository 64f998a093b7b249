//! Segmenter training with optional in-batch RICA duplication.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Segmenter, ToyDataset};
use crate::colorlab::manifest::ManifestRow;
use crate::colorlab::{derive_seed, rica_augment, RgbImage, RicaRanges};
use crate::error::{Error, Result};
use crate::losses::{cross_entropy, IGNORE_INDEX};
use crate::nn::{rgb_batch, Module};
use crate::tensor::optim::{poly_lr, Sgd};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegTrainConfig {
    pub epochs: usize,
    /// Raw images per batch; RICA doubles the effective batch.
    pub batch_size: usize,
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub lr_power: f32,
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 8,
            lr: 8e-2,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_power: 0.9,
        }
    }
}

impl SegTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::Config("segmenter batch_size and lr must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegLogRow {
    pub step: usize,
    pub lr: f32,
    pub loss: f32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SegTrainLog {
    pub rows: Vec<SegLogRow>,
    /// Parameters of every RICA draw, in batch order; empty without RICA.
    pub rica: Vec<ManifestRow>,
}

/// Trains `model` in place. With `rica`, each batch holds the raw images
/// followed by one RICA restyling of each.
pub fn train_segmenter(
    model: &Segmenter,
    data: &ToyDataset,
    rica: Option<&RicaRanges>,
    cfg: &SegTrainConfig,
    seed: u64,
) -> Result<SegTrainLog> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.classes() != model.config().classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, model predicts {}",
            data.classes(),
            model.config().classes
        )));
    }
    if let Some(r) = rica {
        r.validate()?;
    }
    let mut opt = Sgd::new(model.params(), cfg.lr, cfg.momentum, cfg.weight_decay);
    let per_epoch = data.len().div_ceil(cfg.batch_size);
    let total = cfg.epochs * per_epoch;
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let style_seed = derive_seed(seed, 2);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(total);
    let mut manifest = Vec::new();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let step = log.len();
            let mut images: Vec<RgbImage> = chunk.iter().map(|&i| data.images[i].clone()).collect();
            let mut labels: Vec<u8> = chunk.iter().flat_map(|&i| data.labels[i].iter().copied()).collect();
            if let Some(r) = rica {
                let first = (step * cfg.batch_size) as u64;
                let styled = chunk
                    .par_iter()
                    .enumerate()
                    .map(|(k, &i)| {
                        let item_seed = derive_seed(style_seed, first + k as u64);
                        let mut rng = ChaCha8Rng::seed_from_u64(item_seed);
                        let (img, params) = rica_augment(&data.images[i], &mut rng, r)?;
                        let row = ManifestRow {
                            input: format!("{i:04}"),
                            seed: item_seed,
                            params,
                        };
                        Ok((img, row))
                    })
                    .collect::<Result<Vec<_>>>()?;
                for (img, row) in styled {
                    images.push(img);
                    manifest.push(row);
                }
                labels.extend_from_within(..);
            }
            let x = rgb_batch(&images.iter().collect::<Vec<_>>())?;
            let loss = cross_entropy(&model.forward(&x, true)?, &labels, IGNORE_INDEX)?;
            loss.ensure_finite("cross_entropy")?;
            let lr = poly_lr(cfg.lr, step, total, cfg.lr_power);
            opt.lr = lr;
            opt.zero_grad();
            loss.backward()?;
            opt.step();
            log.push(SegLogRow {
                step: step + 1,
                lr,
                loss: loss.value(),
            });
        }
    }
    Ok(SegTrainLog { rows: log, rica: manifest })
}

pub fn write_seg_log<W: std::io::Write>(out: W, rows: &[SegLogRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "lr", "loss"])?;
    for r in rows {
        w.write_record(&[r.step.to_string(), r.lr.to_string(), r.loss.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
