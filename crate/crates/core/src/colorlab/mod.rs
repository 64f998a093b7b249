//! Pixel rasters, exact sRGB/CIELAB conversion and randomized CIELAB color
//! augmentation (RICA).

mod convert;
pub mod io;
pub mod manifest;
mod rica;

pub use convert::{
    decode_lab8, encode_lab8, lab8_to_srgb, lab_pixel_to_srgb, srgb_pixel_to_lab, srgb_to_lab8,
};
pub use rica::{
    channel_stats, derive_seed, rica_apply, rica_augment, rica_augment_lab, rica_step1,
    rica_step2, sample_rica_params, sample_rica_params_seeded, ChannelParams, ChannelRanges, ChannelStats, Interval,
    RicaMode, RicaParams, RicaRanges, STD_FLOOR,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    L,
    A,
    B,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::L, Channel::A, Channel::B];

    pub fn index(self) -> usize {
        match self {
            Channel::L => 0,
            Channel::A => 1,
            Channel::B => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::L => "L",
            Channel::A => "A",
            Channel::B => "B",
        }
    }
}

impl std::str::FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L" | "l" => Ok(Channel::L),
            "A" | "a" => Ok(Channel::A),
            "B" | "b" => Ok(Channel::B),
            other => Err(Error::Config(format!("unknown channel '{other}'"))),
        }
    }
}

fn check_len(width: usize, height: usize, len: usize) -> Result<()> {
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| Error::InvalidImage("dimensions overflow".into()))?;
    if expected != len {
        return Err(Error::InvalidImage(format!(
            "{width}x{height} image needs {expected} values, got {len}"
        )));
    }
    Ok(())
}

/// Row-major interleaved 8-bit sRGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        check_len(width, height, data.len())?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }
}

/// Row-major interleaved CIELAB image in the 8-bit-scaled encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct LabImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl LabImage {
    pub fn from_raw(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        check_len(width, height, data.len())?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Copy of one channel as a contiguous plane.
    pub fn channel(&self, c: Channel) -> Vec<f32> {
        self.data.iter().skip(c.index()).step_by(3).copied().collect()
    }

    pub fn set_channel(&mut self, c: Channel, plane: &[f32]) {
        assert_eq!(plane.len(), self.width * self.height);
        for (dst, &v) in self.data.iter_mut().skip(c.index()).step_by(3).zip(plane) {
            *dst = v;
        }
    }
}
