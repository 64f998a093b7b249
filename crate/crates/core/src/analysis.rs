//! Per-channel CIELAB histograms of image sets and their overlap.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::colorlab::io::{list_images, load_rgb};
use crate::colorlab::{encode_lab8, srgb_pixel_to_lab, Channel, RgbImage};
use crate::error::{Error, IoContext, Result};

pub const DEFAULT_BINS: usize = 64;
const RANGE: f64 = 255.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelHistogram {
    pub channel: Channel,
    pub counts: Vec<u64>,
    pub n_images: usize,
    /// Observed extremes of the encoded channel values.
    pub min: f64,
    pub max: f64,
}

impl ChannelHistogram {
    pub fn empty(channel: Channel, bins: usize) -> Self {
        Self {
            channel,
            counts: vec![0; bins],
            n_images: 0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `[lo, hi)` edges of bin `i` over `[0, 255]`.
    pub fn edges(&self, i: usize) -> (f64, f64) {
        let w = RANGE / self.bins() as f64;
        (i as f64 * w, (i + 1) as f64 * w)
    }

    pub fn add_value(&mut self, v: f64) {
        let bins = self.bins();
        let i = ((v / RANGE * bins as f64).floor().max(0.0) as usize).min(bins - 1);
        self.counts[i] += 1;
        self.min = self.min.min(v);
        self.max = self.max.max(v);
    }

    pub fn add_image(&mut self, img: &RgbImage) {
        let c = self.channel.index();
        for px in img.data().chunks_exact(3) {
            self.add_value(encode_lab8(srgb_pixel_to_lab([px[0], px[1], px[2]]))[c]);
        }
        self.n_images += 1;
    }

    /// Adds another histogram's counts; both must share channel and binning.
    pub fn merge(mut self, other: &Self) -> Result<Self> {
        check_compatible(&self, other)?;
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.n_images += other.n_images;
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
        Ok(self)
    }

    pub fn normalized(&self) -> Vec<f64> {
        let t = self.total().max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }

    /// Metadata comment lines followed by `bin_lo,bin_hi,count` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "# channel={} n_images={} min={:.3} max={:.3}",
            self.channel.name(),
            self.n_images,
            self.min,
            self.max
        )
        .map_err(csv::Error::from)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_lo", "bin_hi", "count"])?;
        for (i, c) in self.counts.iter().enumerate() {
            let (lo, hi) = self.edges(i);
            w.write_record(&[format!("{lo:.4}"), format!("{hi:.4}"), c.to_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

fn check_compatible(a: &ChannelHistogram, b: &ChannelHistogram) -> Result<()> {
    if a.bins() != b.bins() || a.channel != b.channel {
        return Err(Error::BinningMismatch(format!(
            "{} bins of {} vs {} bins of {}",
            a.bins(),
            a.channel.name(),
            b.bins(),
            b.channel.name()
        )));
    }
    Ok(())
}

/// Histogram of `channel` over a set of in-memory images.
pub fn histogram_of(images: &[RgbImage], channel: Channel, bins: usize) -> Result<ChannelHistogram> {
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    images
        .par_iter()
        .map(|img| {
            let mut h = ChannelHistogram::empty(channel, bins);
            h.add_image(img);
            h
        })
        .collect::<Vec<_>>()
        .iter()
        .try_fold(ChannelHistogram::empty(channel, bins), |acc, h| acc.merge(h))
}

/// Histogram of `channel` over up to `n_images` images drawn without
/// replacement from `dir` (all of them if fewer).
pub fn channel_distribution(dir: &Path, channel: Channel, n_images: usize, seed: u64) -> Result<ChannelHistogram> {
    let files = list_images(dir)?;
    if files.is_empty() {
        return Err(Error::EmptyDir(dir.to_path_buf()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, files.len(), n_images.min(files.len())).into_vec();
    picked.sort_unstable();
    let images = picked
        .par_iter()
        .map(|&i| load_rgb(&files[i]))
        .collect::<Result<Vec<_>>>()?;
    histogram_of(&images, channel, DEFAULT_BINS)
}

/// Histogram intersection `sum_i min(p1_i, p2_i)` of the normalized counts.
pub fn range_overlap(h1: &ChannelHistogram, h2: &ChannelHistogram) -> Result<f64> {
    check_compatible(h1, h2)?;
    if h1.total() == 0 || h2.total() == 0 {
        return Err(Error::EmptyDataset);
    }
    let s: f64 = h1.normalized().iter().zip(h2.normalized()).map(|(a, b)| a.min(b)).sum();
    Ok(s.min(1.0))
}

/// Line plot of the normalized histograms, one color per series (up to 4).
pub fn plot_histograms(path: &Path, series: &[&ChannelHistogram]) -> Result<()> {
    const COLORS: [[u8; 3]; 4] = [[31, 119, 180], [214, 39, 40], [44, 160, 44], [148, 103, 189]];
    const W: u32 = 640;
    const H: u32 = 360;
    const M: i64 = 30;
    if series.is_empty() || series.len() > COLORS.len() {
        return Err(Error::Config(format!("plot takes 1 to 4 histograms, got {}", series.len())));
    }
    let mut img = image::RgbImage::from_pixel(W, H, image::Rgb([255, 255, 255]));
    let (x1, y1) = (W as i64 - M, H as i64 - M);
    draw_line(&mut img, (M, y1), (x1, y1), [0, 0, 0]);
    draw_line(&mut img, (M, M), (M, y1), [0, 0, 0]);
    let peak = series
        .iter()
        .flat_map(|h| h.normalized())
        .fold(0.0f64, f64::max)
        .max(1e-12);
    for (h, color) in series.iter().zip(COLORS) {
        let p = h.normalized();
        let n = p.len().max(2) - 1;
        let pts: Vec<(i64, i64)> = p
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let x = M + ((x1 - M) as f64 * i as f64 / n as f64).round() as i64;
                let y = y1 - ((y1 - M) as f64 * v / peak).round() as i64;
                (x, y)
            })
            .collect();
        for seg in pts.windows(2) {
            draw_line(&mut img, seg[0], seg[1], color);
        }
    }
    img.save(path)?;
    Ok(())
}

fn draw_line(img: &mut image::RgbImage, a: (i64, i64), b: (i64, i64), color: [u8; 3]) {
    let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()).max(1);
    for s in 0..=steps {
        let x = a.0 + (b.0 - a.0) * s / steps;
        let y = a.1 + (b.1 - a.1) * s / steps;
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, image::Rgb(color));
        }
    }
}

/// Writes the histogram CSV to `path`.
pub fn save_histogram_csv(path: &Path, h: &ChannelHistogram) -> Result<()> {
    let f = std::fs::File::create(path).at(path)?;
    h.write_csv(std::io::BufWriter::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(lo: usize, hi: usize) -> ChannelHistogram {
        let mut h = ChannelHistogram::empty(Channel::A, 64);
        for i in lo..hi {
            h.counts[i] = 10;
        }
        h
    }

    #[test]
    fn overlap_examples() {
        let h = uniform(0, 32);
        assert_eq!(range_overlap(&h, &h).unwrap(), 1.0);
        assert_eq!(range_overlap(&uniform(0, 16), &uniform(16, 32)).unwrap(), 0.0);
        assert!((range_overlap(&uniform(0, 32), &uniform(16, 48)).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mismatched_binning_rejected() {
        let a = ChannelHistogram::empty(Channel::A, 64);
        let b = ChannelHistogram::empty(Channel::A, 32);
        assert!(matches!(range_overlap(&a, &b), Err(Error::BinningMismatch(_))));
    }

    #[test]
    fn constant_images_fill_one_bin() {
        let imgs = vec![RgbImage::filled(4, 4, [200, 30, 90]); 3];
        for c in Channel::ALL {
            let h = histogram_of(&imgs, c, 64).unwrap();
            assert_eq!(h.counts.iter().filter(|&&n| n > 0).count(), 1);
            assert_eq!(h.total(), 48);
            assert_eq!(h.min, h.max);
        }
    }

    #[test]
    fn csv_layout() {
        let mut h = ChannelHistogram::empty(Channel::L, 4);
        h.add_value(10.0);
        h.add_value(250.0);
        h.n_images = 1;
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "# channel=L n_images=1 min=10.000 max=250.000");
        assert_eq!(lines[1], "bin_lo,bin_hi,count");
        assert_eq!(lines[2], "0.0000,63.7500,1");
        assert_eq!(lines[5], "191.2500,255.0000,1");
    }
}
