//! sRGB (IEC 61966-2-1, D65) to CIELAB and back, using an 8-bit-scaled Lab
//! encoding where every channel lives in `[0, 255]`:
//! `L' = L * 255 / 100`, `A' = a + 128`, `B' = b + 128`.

use std::sync::OnceLock;

use super::{LabImage, RgbImage};

/// D65 reference white, Y normalized to 1.
const WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];

const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

const XYZ_TO_RGB: [[f64; 3]; 3] = [
    [3.2404542, -1.5371385, -0.4985314],
    [-0.9692660, 1.8760108, 0.0415560],
    [0.0556434, -0.2040259, 1.0572252],
];

const DELTA: f64 = 6.0 / 29.0;

pub const L_SCALE: f64 = 255.0 / 100.0;
pub const AB_OFFSET: f64 = 128.0;

fn decode_gamma(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn encode_gamma(c: f64) -> f64 {
    if c <= 0.0031308 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

fn linear_lut() -> &'static [f64; 256] {
    static LUT: OnceLock<[f64; 256]> = OnceLock::new();
    LUT.get_or_init(|| {
        let mut lut = [0.0; 256];
        for (i, v) in lut.iter_mut().enumerate() {
            *v = decode_gamma(i as f64 / 255.0);
        }
        lut
    })
}

fn lab_f(t: f64) -> f64 {
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    if t > DELTA {
        t * t * t
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

/// CIELAB `(L, a, b)` of one sRGB pixel, unscaled.
pub fn srgb_pixel_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let lut = linear_lut();
    let lin = [lut[rgb[0] as usize], lut[rgb[1] as usize], lut[rgb[2] as usize]];
    let mut t = [0.0; 3];
    for (k, row) in RGB_TO_XYZ.iter().enumerate() {
        let xyz = row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2];
        t[k] = lab_f(xyz / WHITE[k]);
    }
    [
        116.0 * t[1] - 16.0,
        500.0 * (t[0] - t[1]),
        200.0 * (t[1] - t[2]),
    ]
}

/// sRGB of an unscaled CIELAB triple, clamped to the gamut and rounded.
pub fn lab_pixel_to_srgb(lab: [f64; 3]) -> [u8; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let xyz = [
        WHITE[0] * lab_f_inv(fx),
        WHITE[1] * lab_f_inv(fy),
        WHITE[2] * lab_f_inv(fz),
    ];
    let mut out = [0u8; 3];
    for (k, row) in XYZ_TO_RGB.iter().enumerate() {
        let lin = (row[0] * xyz[0] + row[1] * xyz[1] + row[2] * xyz[2]).clamp(0.0, 1.0);
        out[k] = (encode_gamma(lin) * 255.0).round().clamp(0.0, 255.0) as u8;
    }
    out
}

pub fn encode_lab8(lab: [f64; 3]) -> [f64; 3] {
    [lab[0] * L_SCALE, lab[1] + AB_OFFSET, lab[2] + AB_OFFSET]
}

pub fn decode_lab8(enc: [f64; 3]) -> [f64; 3] {
    [enc[0] / L_SCALE, enc[1] - AB_OFFSET, enc[2] - AB_OFFSET]
}

pub fn srgb_to_lab8(img: &RgbImage) -> LabImage {
    let data = img
        .data()
        .chunks_exact(3)
        .flat_map(|px| {
            let enc = encode_lab8(srgb_pixel_to_lab([px[0], px[1], px[2]]));
            enc.map(|v| v as f32)
        })
        .collect();
    LabImage::from_raw(img.width(), img.height(), data).expect("dimensions preserved")
}

pub fn lab8_to_srgb(img: &LabImage) -> RgbImage {
    let data = img
        .data()
        .chunks_exact(3)
        .flat_map(|px| {
            let enc = [px[0] as f64, px[1] as f64, px[2] as f64];
            lab_pixel_to_srgb(decode_lab8(enc))
        })
        .collect();
    RgbImage::from_raw(img.width(), img.height(), data).expect("dimensions preserved")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(rgb: [u8; 3]) -> [f32; 3] {
        let img = RgbImage::from_raw(1, 1, rgb.to_vec()).unwrap();
        let lab = srgb_to_lab8(&img);
        [lab.data()[0], lab.data()[1], lab.data()[2]]
    }

    #[test]
    fn anchor_colors() {
        let close = |a: [f32; 3], b: [f32; 3]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 0.05);
        assert!(close(one([255, 255, 255]), [255.0, 128.0, 128.0]));
        assert!(close(one([0, 0, 0]), [0.0, 128.0, 128.0]));
        // double-precision reference: Lab (53.2408, 80.0925, 67.2032)
        assert!(close(one([255, 0, 0]), [135.764, 208.092, 195.203]));
    }

    #[test]
    fn white_and_black_decode_exactly() {
        let lab = LabImage::from_raw(2, 1, vec![255.0, 128.0, 128.0, 0.0, 128.0, 128.0]).unwrap();
        assert_eq!(lab8_to_srgb(&lab).data(), &[255, 255, 255, 0, 0, 0]);
    }

    #[test]
    fn out_of_gamut_is_clamped() {
        let lab = LabImage::from_raw(1, 1, vec![128.0, 255.0, 0.0]).unwrap();
        let rgb = lab8_to_srgb(&lab);
        assert_eq!(rgb.data().len(), 3);
    }

    #[test]
    fn every_gray_level_round_trips() {
        for v in 0..=255u8 {
            let img = RgbImage::from_raw(1, 1, vec![v, v, v]).unwrap();
            let back = lab8_to_srgb(&srgb_to_lab8(&img));
            for &c in back.data() {
                assert!((c as i32 - v as i32).abs() <= 1, "{v} -> {c}");
            }
        }
    }
}
