//! Confusion-matrix mIoU.

use std::io::Write;

use super::{Segmenter, ToyDataset};
use crate::error::{Error, Result};
use crate::losses::IGNORE_INDEX;
use crate::nn::rgb_batch;

const EVAL_BATCH: usize = 16;

/// Class-by-class pixel counts, `counts[truth * classes + predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confusion {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    /// Adds a prediction/label pair; labels equal to the ignore index are
    /// skipped.
    pub fn add(&mut self, predicted: &[u8], truth: &[u8]) -> Result<()> {
        if predicted.len() != truth.len() {
            return Err(Error::Shape(format!("{} predictions for {} labels", predicted.len(), truth.len())));
        }
        for (&p, &t) in predicted.iter().zip(truth) {
            if t == IGNORE_INDEX {
                continue;
            }
            for v in [p, t] {
                if v as usize >= self.classes {
                    return Err(Error::LabelOutOfRange {
                        label: v as u32,
                        classes: self.classes,
                    });
                }
            }
            self.counts[t as usize * self.classes + p as usize] += 1;
        }
        Ok(())
    }

    pub fn report(&self) -> Result<MiouReport> {
        let k = self.classes;
        if self.counts.iter().all(|&c| c == 0) {
            return Err(Error::EmptyDataset);
        }
        let ious: Vec<Option<f64>> = (0..k)
            .map(|c| {
                let tp = self.counts[c * k + c];
                let truth: u64 = self.counts[c * k..(c + 1) * k].iter().sum();
                let pred: u64 = (0..k).map(|t| self.counts[t * k + c]).sum();
                let union = truth + pred - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect();
        let present: Vec<f64> = ious.iter().flatten().copied().collect();
        let miou = present.iter().sum::<f64>() / present.len() as f64;
        Ok(MiouReport { ious, miou })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiouReport {
    /// `None` for classes absent from both prediction and ground truth.
    pub ious: Vec<Option<f64>>,
    pub miou: f64,
}

impl MiouReport {
    /// `class,iou` rows (absent classes as `nan`) and a closing `miou` row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["class", "iou"])?;
        for (c, iou) in self.ious.iter().enumerate() {
            let v = iou.map_or_else(|| "nan".to_owned(), |v| format!("{v:.6}"));
            w.write_record(&[c.to_string(), v])?;
        }
        w.write_record(&["miou".to_owned(), format!("{:.6}", self.miou)])?;
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// mIoU of prediction maps against label maps.
pub fn miou_from_maps(predicted: &[Vec<u8>], truth: &[Vec<u8>], classes: usize) -> Result<MiouReport> {
    if predicted.len() != truth.len() {
        return Err(Error::Shape(format!("{} predictions for {} label maps", predicted.len(), truth.len())));
    }
    let mut conf = Confusion::new(classes);
    for (p, t) in predicted.iter().zip(truth) {
        conf.add(p, t)?;
    }
    conf.report()
}

/// Per-pixel argmax class maps for every image (inference mode, through any
/// plugged generator).
pub fn predict(model: &Segmenter, data: &ToyDataset) -> Result<Vec<Vec<u8>>> {
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.images.chunks(EVAL_BATCH) {
        let x = rgb_batch(&chunk.iter().collect::<Vec<_>>())?;
        let logits = model.forward(&x, false)?;
        let &[b, k, h, w] = logits.shape() else { unreachable!("4-D logits") };
        let v = logits.data();
        let plane = h * w;
        for bi in 0..b {
            let map = (0..plane)
                .map(|p| {
                    let mut best = 0;
                    for c in 1..k {
                        if v[(bi * k + c) * plane + p] > v[(bi * k + best) * plane + p] {
                            best = c;
                        }
                    }
                    best as u8
                })
                .collect();
            out.push(map);
        }
    }
    Ok(out)
}

pub fn evaluate_miou(model: &Segmenter, data: &ToyDataset) -> Result<MiouReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    miou_from_maps(&predict(model, data)?, &data.labels, model.config().classes)
}
