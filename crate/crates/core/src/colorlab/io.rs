//! PNG/JPEG reading and writing for RGB rasters and 8-bit label maps.

use std::path::{Path, PathBuf};

use super::RgbImage;
use crate::error::{Error, IoContext, Result};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    RgbImage::from_raw(w as usize, h as usize, img.into_raw())
}

/// Writes PNG or JPEG depending on the extension.
pub fn save_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.data().to_vec())
        .ok_or_else(|| Error::InvalidImage("buffer size".into()))?;
    buf.save(path)?;
    Ok(())
}

/// Single-channel 8-bit map of class indices.
pub fn load_labels(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    Ok((w as usize, h as usize, img.into_raw()))
}

pub fn save_labels(path: &Path, width: usize, height: usize, labels: &[u8]) -> Result<()> {
    let buf = image::GrayImage::from_raw(width as u32, height as u32, labels.to_vec())
        .ok_or_else(|| Error::InvalidImage("label buffer size".into()))?;
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Image files directly inside `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).at(dir)? {
        let path = entry.at(dir)?.path();
        if path.is_file() && is_image(&path) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}
