//! Procedural segmentation scenes with a controllable color-domain shift.
//!
//! Each scene is a textured background with a few overlapping shapes. The
//! class decides the shape outline, the fill pattern and the palette color.
//! The target domain re-renders the very same scene through a fixed CIELAB
//! transform, so label maps are identical across domains and only color
//! statistics move.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::colorlab::io::{load_labels, load_rgb, save_labels, save_rgb};
use crate::colorlab::{derive_seed, lab_pixel_to_srgb, RgbImage};
use crate::error::{Error, IoContext, Result};

pub const DEFAULT_CLASSES: usize = 5;
pub const DEFAULT_SIZE: usize = 64;
const PALETTE_ID: &str = "toy-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Self::Source),
            "target" => Ok(Self::Target),
            _ => Err(Error::Config(format!("unknown domain '{s}' (expected source|target)"))),
        }
    }
}

/// CIELAB transform applied to every rendered pixel of the target domain:
/// `L' = l_scale * L + l_offset`, `a' = a + a_shift`, `b' = b + b_shift`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorShift {
    pub l_scale: f64,
    pub l_offset: f64,
    pub a_shift: f64,
    pub b_shift: f64,
}

impl ColorShift {
    pub const IDENTITY: Self = Self {
        l_scale: 1.0,
        l_offset: 0.0,
        a_shift: 0.0,
        b_shift: 0.0,
    };

    pub const TARGET: Self = Self {
        l_scale: 0.55,
        l_offset: 4.0,
        a_shift: 40.0,
        b_shift: -35.0,
    };

    fn apply(&self, lab: [f64; 3]) -> [f64; 3] {
        [
            (self.l_scale * lab[0] + self.l_offset).clamp(0.0, 100.0),
            lab[1] + self.a_shift,
            lab[2] + self.b_shift,
        ]
    }
}

impl Domain {
    pub fn shift(self) -> ColorShift {
        match self {
            Self::Source => ColorShift::IDENTITY,
            Self::Target => ColorShift::TARGET,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Source => "source",
            Self::Target => "target",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainDescriptor {
    pub name: Domain,
    pub palette: String,
    pub shift: ColorShift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub classes: usize,
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub domain: DomainDescriptor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub images: Vec<RgbImage>,
    /// Row-major class indices, one map per image.
    pub labels: Vec<Vec<u8>>,
    pub manifest: DatasetManifest,
}

impl ToyDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.manifest.classes
    }

    /// Writes `images/NNNN.png`, `labels/NNNN.png` and `manifest.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let (img_dir, lab_dir) = (dir.join("images"), dir.join("labels"));
        fs::create_dir_all(&img_dir).at(&img_dir)?;
        fs::create_dir_all(&lab_dir).at(&lab_dir)?;
        self.images
            .par_iter()
            .zip(&self.labels)
            .enumerate()
            .try_for_each(|(i, (img, lab))| {
                let name = format!("{i:04}.png");
                save_rgb(&img_dir.join(&name), img)?;
                save_labels(&lab_dir.join(&name), img.width(), img.height(), lab)
            })?;
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&self.manifest)?).at(&path)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(&path).at(&path)?)?;
        if manifest.count == 0 {
            return Err(Error::EmptyDataset);
        }
        let pairs: Vec<(RgbImage, Vec<u8>)> = (0..manifest.count)
            .into_par_iter()
            .map(|i| {
                let name = format!("{i:04}.png");
                let img = load_rgb(&dir.join("images").join(&name))?;
                let (w, h, lab) = load_labels(&dir.join("labels").join(&name))?;
                if (w, h) != (img.width(), img.height()) {
                    return Err(Error::Shape(format!("label map {name} is {w}x{h}, image is {}x{}", img.width(), img.height())));
                }
                if let Some(&bad) = lab.iter().find(|&&l| l as usize >= manifest.classes) {
                    return Err(Error::LabelOutOfRange {
                        label: bad as u32,
                        classes: manifest.classes,
                    });
                }
                Ok((img, lab))
            })
            .collect::<Result<_>>()?;
        let (images, labels) = pairs.into_iter().unzip();
        Ok(Self { images, labels, manifest })
    }
}

/// Lab color of each class; class 0 is the background.
fn base_palette(k: usize) -> [f64; 3] {
    const BASE: [[f64; 3]; 5] = [
        [70.0, -12.0, 28.0],
        [56.0, 22.0, 12.0],
        [80.0, -4.0, -14.0],
        [66.0, 8.0, 42.0],
        [52.0, -20.0, 2.0],
    ];
    if k < BASE.len() {
        return BASE[k];
    }
    // extra classes: rotate the hue of a shape class
    let [l, a, b] = BASE[1 + (k - 1) % 4];
    let t = 1.1 * ((k - 1) / 4) as f64;
    [l, a * t.cos() - b * t.sin(), a * t.sin() + b * t.cos()]
}

#[derive(Clone, Copy)]
enum Outline {
    Circle,
    Square,
    Triangle,
    Diamond,
}

#[derive(Clone, Copy)]
enum Fill {
    Solid,
    HStripes,
    VStripes,
    Checker,
}

fn class_style(k: usize) -> (Outline, Fill) {
    let outline = [Outline::Circle, Outline::Square, Outline::Triangle, Outline::Diamond][(k - 1) % 4];
    let fill = [Fill::Solid, Fill::HStripes, Fill::VStripes, Fill::Checker][((k - 1) + (k - 1) / 4) % 4];
    (outline, fill)
}

fn inside(outline: Outline, dx: f64, dy: f64, r: f64) -> bool {
    match outline {
        Outline::Circle => dx * dx + dy * dy <= r * r,
        Outline::Square => dx.abs().max(dy.abs()) <= 0.85 * r,
        Outline::Triangle => (-r..=0.7 * r).contains(&dy) && dx.abs() <= (dy + r) / 1.7,
        Outline::Diamond => dx.abs() + dy.abs() <= r,
    }
}

fn pattern_on(fill: Fill, x: usize, y: usize) -> bool {
    match fill {
        Fill::Solid => true,
        Fill::HStripes => (y / 2) % 2 == 0,
        Fill::VStripes => (x / 2) % 2 == 0,
        Fill::Checker => (x / 2 + y / 2) % 2 == 0,
    }
}

/// Smooth noise in [-1, 1] from a bilinearly interpolated random lattice.
fn value_noise<R: Rng>(rng: &mut R, w: usize, h: usize, cell: usize) -> Vec<f64> {
    let gw = w / cell + 2;
    let gh = h / cell + 2;
    let grid: Vec<f64> = (0..gw * gh).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let fy = y as f64 / cell as f64;
        let (y0, ty) = (fy as usize, fy.fract());
        for x in 0..w {
            let fx = x as f64 / cell as f64;
            let (x0, tx) = (fx as usize, fx.fract());
            let g = |i: usize, j: usize| grid[j * gw + i];
            let top = g(x0, y0) * (1.0 - tx) + g(x0 + 1, y0) * tx;
            let bot = g(x0, y0 + 1) * (1.0 - tx) + g(x0 + 1, y0 + 1) * tx;
            out[y * w + x] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}

fn render_scene(seed: u64, size: usize, classes: usize, shift: ColorShift) -> (RgbImage, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (size, size);
    let jitter = |rng: &mut ChaCha8Rng, c: [f64; 3]| {
        [c[0] + rng.gen_range(-4.0..4.0), c[1] + rng.gen_range(-3.0..3.0), c[2] + rng.gen_range(-3.0..3.0)]
    };
    let palette: Vec<[f64; 3]> = (0..classes).map(|k| jitter(&mut rng, base_palette(k))).collect();
    let noise = value_noise(&mut rng, w, h, 8);

    let mut labels = vec![0u8; w * h];
    let mut lab: Vec<[f64; 3]> = (0..w * h)
        .map(|i| {
            let [l, a, b] = palette[0];
            [l + 8.0 * noise[i], a + 3.0 * noise[i], b - 3.0 * noise[i]]
        })
        .collect();

    if classes > 1 {
        let n_shapes = rng.gen_range(2..=4);
        for _ in 0..n_shapes {
            let k = rng.gen_range(1..classes);
            let (outline, fill) = class_style(k);
            let r = rng.gen_range(7.0..14.0);
            let cx = rng.gen_range(6.0..(w as f64 - 6.0));
            let cy = rng.gen_range(6.0..(h as f64 - 6.0));
            let [l, a, b] = palette[k];
            for y in 0..h {
                for x in 0..w {
                    let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                    if inside(outline, dx, dy, r) {
                        let i = y * w + x;
                        labels[i] = k as u8;
                        lab[i] = if pattern_on(fill, x, y) { [l, a, b] } else { [l - 20.0, a * 0.6, b * 0.6] };
                    }
                }
            }
        }
    }

    let mut data = Vec::with_capacity(w * h * 3);
    for px in &lab {
        let [l, a, b] = *px;
        let l = l + rng.gen_range(-1.5..1.5);
        data.extend_from_slice(&lab_pixel_to_srgb(shift.apply([l, a, b])));
    }
    (RgbImage::from_raw(w, h, data).expect("sized buffer"), labels)
}

/// `n` scenes of `size`x`size` pixels with `classes` classes (background
/// included). Scene `i` depends only on `(seed, i)`, so the domain changes
/// colors and nothing else.
pub fn gen_toy_dataset_sized(n: usize, seed: u64, domain: Domain, classes: usize, size: usize) -> Result<ToyDataset> {
    if n == 0 {
        return Err(Error::Config("dataset size must be at least 1".into()));
    }
    if !(1..=255).contains(&classes) {
        return Err(Error::Config(format!("class count {classes} outside 1..=255")));
    }
    if size < 16 {
        return Err(Error::Config(format!("image size {size} below 16")));
    }
    let shift = domain.shift();
    let (images, labels) = (0..n)
        .into_par_iter()
        .map(|i| render_scene(derive_seed(seed, i as u64), size, classes, shift))
        .unzip();
    Ok(ToyDataset {
        images,
        labels,
        manifest: DatasetManifest {
            seed,
            classes,
            count: n,
            width: size,
            height: size,
            domain: DomainDescriptor {
                name: domain,
                palette: PALETTE_ID.to_owned(),
                shift,
            },
        },
    })
}

pub fn gen_toy_dataset(n: usize, seed: u64, domain: Domain, classes: usize) -> Result<ToyDataset> {
    gen_toy_dataset_sized(n, seed, domain, classes, DEFAULT_SIZE)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regeneration_is_identical() {
        let a = gen_toy_dataset(1, 9, Domain::Source, 5).unwrap();
        let b = gen_toy_dataset(1, 9, Domain::Source, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn domains_share_labels_not_pixels() {
        let s = gen_toy_dataset(3, 4, Domain::Source, 5).unwrap();
        let t = gen_toy_dataset(3, 4, Domain::Target, 5).unwrap();
        assert_eq!(s.labels, t.labels);
        assert_ne!(s.images, t.images);
    }

    #[test]
    fn labels_in_range_and_shapes_present() {
        let d = gen_toy_dataset(20, 1, Domain::Source, 5).unwrap();
        let mut seen = [false; 5];
        for lab in &d.labels {
            assert_eq!(lab.len(), 64 * 64);
            for &l in lab {
                seen[l as usize] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = gen_toy_dataset(3, 2, Domain::Target, 5).unwrap();
        d.save(dir.path()).unwrap();
        assert_eq!(ToyDataset::load(dir.path()).unwrap(), d);
    }

    #[test]
    fn zero_images_rejected() {
        assert!(gen_toy_dataset(0, 0, Domain::Source, 5).is_err());
    }
}
