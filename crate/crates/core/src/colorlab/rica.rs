use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{lab8_to_srgb, srgb_to_lab8, Channel, LabImage, RgbImage};
use crate::error::{Error, Result};

/// Floor on the source standard deviation so constant channels map to the
/// target mean instead of dividing by zero.
pub const STD_FLOOR: f64 = 1e-6;

const ENC_MAX: f64 = 255.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Mean, population standard deviation, min and max in double precision.
pub fn channel_stats(values: &[f32]) -> Result<ChannelStats> {
    if values.is_empty() {
        return Err(Error::EmptyChannel);
    }
    let n = values.len() as f64;
    let mut sum = 0.0;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in values {
        let v = v as f64;
        sum += v;
        min = min.min(v);
        max = max.max(v);
    }
    let mean = sum / n;
    let var = values
        .iter()
        .map(|&v| {
            let d = v as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    Ok(ChannelStats {
        mean,
        std: var.sqrt(),
        min,
        max,
    })
}

/// Randomization parameters for one channel, all in encoded units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub target_mean: f64,
    pub target_std: f64,
    /// Width `S` of the Step-2 target interval.
    pub span: f64,
    /// Start `T` of the Step-2 target interval.
    pub start: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RicaParams {
    pub channels: [ChannelParams; 3],
}

impl RicaParams {
    pub fn channel(&self, c: Channel) -> &ChannelParams {
        &self.channels[c.index()]
    }

    pub fn validate(&self) -> Result<()> {
        for c in Channel::ALL {
            let p = self.channel(c);
            let ok = (0.0..=ENC_MAX).contains(&p.target_mean)
                && p.target_std >= 0.0
                && p.span > 0.0
                && p.span <= ENC_MAX
                && p.start >= 0.0
                && p.start <= ENC_MAX - p.span + 1e-9;
            if !ok {
                return Err(Error::InvalidRange(format!(
                    "channel {} parameters {p:?}",
                    c.name()
                )));
            }
        }
        Ok(())
    }
}

/// Closed interval `[lo, hi]`, serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            // still consume a draw so the stream position is mode-independent
            let _: f64 = rng.gen();
            self.lo
        } else {
            rng.gen_range(self.lo..=self.hi)
        }
    }

    fn check(&self, what: &str, floor: f64, ceil: f64) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite()) || self.lo > self.hi {
            return Err(Error::InvalidRange(format!(
                "{what}: [{}, {}] is empty",
                self.lo, self.hi
            )));
        }
        if self.lo < floor || self.hi > ceil {
            return Err(Error::InvalidRange(format!(
                "{what}: [{}, {}] outside [{floor}, {ceil}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

impl From<[f64; 2]> for Interval {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelRanges {
    pub mean: Interval,
    pub std: Interval,
    pub span: Interval,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RicaMode {
    Step1,
    Step2,
    #[default]
    Both,
}

impl RicaMode {
    pub fn runs_step1(self) -> bool {
        matches!(self, RicaMode::Step1 | RicaMode::Both)
    }

    pub fn runs_step2(self) -> bool {
        matches!(self, RicaMode::Step2 | RicaMode::Both)
    }
}

impl std::str::FromStr for RicaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "step1" => Ok(RicaMode::Step1),
            "step2" => Ok(RicaMode::Step2),
            "both" => Ok(RicaMode::Both),
            other => Err(Error::Config(format!("unknown RICA mode '{other}'"))),
        }
    }
}

/// Sampling intervals for every channel plus which steps run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RicaRanges {
    #[serde(rename = "L")]
    pub l: ChannelRanges,
    #[serde(rename = "A")]
    pub a: ChannelRanges,
    #[serde(rename = "B")]
    pub b: ChannelRanges,
    #[serde(default)]
    pub mode: RicaMode,
}

impl Default for RicaRanges {
    /// μ in [0, 255] for every channel; σ in [0, 100] and S in [30, 255] for
    /// L; σ in [0, 15] and S in [30, 220] for A and B.
    fn default() -> Self {
        let color = ChannelRanges {
            mean: Interval::new(0.0, 255.0),
            std: Interval::new(0.0, 15.0),
            span: Interval::new(30.0, 220.0),
        };
        Self {
            l: ChannelRanges {
                mean: Interval::new(0.0, 255.0),
                std: Interval::new(0.0, 100.0),
                span: Interval::new(30.0, 255.0),
            },
            a: color,
            b: color,
            mode: RicaMode::Both,
        }
    }
}

impl RicaRanges {
    pub fn with_mode(mut self, mode: RicaMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn channel(&self, c: Channel) -> &ChannelRanges {
        match c {
            Channel::L => &self.l,
            Channel::A => &self.a,
            Channel::B => &self.b,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for c in Channel::ALL {
            let r = self.channel(c);
            let name = c.name();
            r.mean.check(&format!("mean({name})"), 0.0, ENC_MAX)?;
            r.std.check(&format!("std({name})"), 0.0, f64::MAX)?;
            r.span.check(&format!("span({name})"), 0.0, ENC_MAX)?;
            if r.span.lo <= 0.0 {
                return Err(Error::InvalidRange(format!("span({name}) must be positive")));
            }
        }
        Ok(())
    }
}

/// Draws μ, σ, S uniformly from their intervals and T uniformly from
/// `[0, 255 - S]`, channel by channel in L, A, B order.
pub fn sample_rica_params<R: Rng + ?Sized>(rng: &mut R, ranges: &RicaRanges) -> Result<RicaParams> {
    ranges.validate()?;
    let mut channels = [ChannelParams::default(); 3];
    for c in Channel::ALL {
        let r = ranges.channel(c);
        let target_mean = r.mean.sample(rng);
        let target_std = r.std.sample(rng);
        let span = r.span.sample(rng);
        let start = Interval::new(0.0, ENC_MAX - span).sample(rng);
        channels[c.index()] = ChannelParams {
            target_mean,
            target_std,
            span,
            start,
        };
    }
    Ok(RicaParams { channels })
}

fn remap_stats(plane: &mut [f32], target_mean: f64, target_std: f64) {
    let Ok(stats) = channel_stats(plane) else {
        return;
    };
    let scale = target_std / stats.std.max(STD_FLOOR);
    for v in plane.iter_mut() {
        let m = scale * (*v as f64 - stats.mean) + target_mean;
        *v = m.clamp(0.0, ENC_MAX) as f32;
    }
}

fn remap_range(plane: &mut [f32], span: f64, start: f64) {
    let Ok(stats) = channel_stats(plane) else {
        return;
    };
    let width = stats.max - stats.min;
    if width <= 0.0 {
        plane.fill((start + span / 2.0) as f32);
        return;
    }
    for v in plane.iter_mut() {
        *v = ((*v as f64 - stats.min) / width * span + start) as f32;
    }
}

/// Re-targets each channel's mean and standard deviation, then clips to
/// `[0, 255]`.
pub fn rica_step1(img: &LabImage, params: &RicaParams) -> LabImage {
    let mut out = img.clone();
    for c in Channel::ALL {
        let p = params.channel(c);
        let mut plane = img.channel(c);
        remap_stats(&mut plane, p.target_mean, p.target_std);
        out.set_channel(c, &plane);
    }
    out
}

/// Linearly maps each channel's `[min, max]` onto `[T, T + S]`. A constant
/// channel lands on the interval midpoint.
pub fn rica_step2(img: &LabImage, params: &RicaParams) -> LabImage {
    let mut out = img.clone();
    for c in Channel::ALL {
        let p = params.channel(c);
        let mut plane = img.channel(c);
        remap_range(&mut plane, p.span, p.start);
        out.set_channel(c, &plane);
    }
    out
}

pub fn rica_augment_lab(img: &LabImage, params: &RicaParams, mode: RicaMode) -> LabImage {
    let mut lab = img.clone();
    if mode.runs_step1() {
        lab = rica_step1(&lab, params);
    }
    if mode.runs_step2() {
        lab = rica_step2(&lab, params);
    }
    lab
}

/// RICA with fixed parameters: sRGB -> Lab -> steps -> sRGB.
pub fn rica_apply(img: &RgbImage, params: &RicaParams, mode: RicaMode) -> RgbImage {
    lab8_to_srgb(&rica_augment_lab(&srgb_to_lab8(img), params, mode))
}

/// RICA with parameters freshly drawn from `rng`. Returns the augmented
/// image together with the parameters used.
pub fn rica_augment<R: Rng + ?Sized>(
    img: &RgbImage,
    rng: &mut R,
    ranges: &RicaRanges,
) -> Result<(RgbImage, RicaParams)> {
    let params = sample_rica_params(rng, ranges)?;
    Ok((rica_apply(img, &params, ranges.mode), params))
}

/// Parameters drawn from a fresh generator seeded with `seed`; this is how
/// each manifest row's parameters follow from its recorded seed.
pub fn sample_rica_params_seeded(seed: u64, ranges: &RicaRanges) -> Result<RicaParams> {
    sample_rica_params(&mut ChaCha8Rng::seed_from_u64(seed), ranges)
}

/// Per-item seed derived from a run seed and an item index, independent of
/// how items are scheduled across workers.
pub fn derive_seed(run_seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = run_seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_channel_image(values: &[f32]) -> LabImage {
        // same values in every channel
        let data = values.iter().flat_map(|&v| [v, v, v]).collect();
        LabImage::from_raw(values.len(), 1, data).unwrap()
    }

    fn uniform_params(mean: f64, std: f64, span: f64, start: f64) -> RicaParams {
        RicaParams {
            channels: [ChannelParams {
                target_mean: mean,
                target_std: std,
                span,
                start,
            }; 3],
        }
    }

    #[test]
    fn stats_examples() {
        let s = channel_stats(&[5.0, 5.0, 5.0]).unwrap();
        assert_eq!((s.mean, s.std, s.min, s.max), (5.0, 0.0, 5.0, 5.0));
        let s = channel_stats(&[0.0, 128.0, 255.0]).unwrap();
        assert!((s.mean - 127.666_666_7).abs() < 1e-6);
        assert!((s.std - 104.103_580_9).abs() < 1e-6);
        let s = channel_stats(&[0.0, 255.0]).unwrap();
        assert_eq!((s.mean, s.std), (127.5, 127.5));
        assert!(matches!(channel_stats(&[]), Err(Error::EmptyChannel)));
    }

    #[test]
    fn step1_worked_example() {
        let img = single_channel_image(&[0.0, 128.0, 255.0]);
        let out = rica_step1(&img, &uniform_params(100.0, 50.0, 100.0, 0.0));
        let expected = [38.682_865, 100.160_097, 161.157_038];
        for (got, want) in out.channel(Channel::A).iter().zip(expected) {
            assert!((*got as f64 - want).abs() < 1e-3, "{got} vs {want}");
        }
    }

    #[test]
    fn step1_constant_channel_takes_target_mean() {
        let img = single_channel_image(&[7.0, 7.0, 7.0]);
        let out = rica_step1(&img, &uniform_params(200.0, 50.0, 100.0, 0.0));
        assert!(out.data().iter().all(|&v| v == 200.0));
    }

    #[test]
    fn step1_identity_statistics() {
        let values = [12.0, 40.5, 99.0, 200.25, 31.0];
        let img = single_channel_image(&values);
        let s = channel_stats(&values).unwrap();
        let out = rica_step1(&img, &uniform_params(s.mean, s.std, 100.0, 0.0));
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn step1_clips() {
        let img = single_channel_image(&[0.0, 255.0]);
        let out = rica_step1(&img, &uniform_params(128.0, 500.0, 100.0, 0.0));
        assert!(out.data().iter().all(|&v| (0.0..=255.0).contains(&v)));
    }

    #[test]
    fn step2_worked_example() {
        let img = single_channel_image(&[38.68, 100.16, 161.16]);
        let out = rica_step2(&img, &uniform_params(0.0, 0.0, 100.0, 50.0));
        let got = out.channel(Channel::L);
        assert!((got[0] - 50.0).abs() < 1e-4);
        assert!((got[1] - 100.196).abs() < 1e-2);
        assert!((got[2] - 150.0).abs() < 1e-4);
    }

    #[test]
    fn step2_fixes_matching_endpoints() {
        let values = [20.0, 35.0, 80.0];
        let img = single_channel_image(&values);
        let out = rica_step2(&img, &uniform_params(0.0, 0.0, 60.0, 20.0));
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn step2_constant_channel_maps_to_midpoint() {
        let img = single_channel_image(&[3.0, 3.0]);
        let out = rica_step2(&img, &uniform_params(0.0, 0.0, 60.0, 90.0));
        assert!(out.data().iter().all(|&v| v == 120.0));
    }

    #[test]
    fn default_ranges() {
        let r = RicaRanges::default();
        assert_eq!(r.l.mean, Interval::new(0.0, 255.0));
        assert_eq!(r.l.std, Interval::new(0.0, 100.0));
        assert_eq!(r.l.span, Interval::new(30.0, 255.0));
        for c in [r.a, r.b] {
            assert_eq!(c.mean, Interval::new(0.0, 255.0));
            assert_eq!(c.std, Interval::new(0.0, 15.0));
            assert_eq!(c.span, Interval::new(30.0, 220.0));
        }
        assert_eq!(r.mode, RicaMode::Both);
    }

    #[test]
    fn degenerate_ranges_give_that_point() {
        let point = |m, s, w| ChannelRanges {
            mean: Interval::point(m),
            std: Interval::point(s),
            span: Interval::point(w),
        };
        let ranges = RicaRanges {
            l: point(10.0, 2.0, 255.0),
            a: point(20.0, 3.0, 255.0),
            b: point(30.0, 4.0, 255.0),
            mode: RicaMode::Both,
        };
        let p = sample_rica_params(&mut ChaCha8Rng::seed_from_u64(9), &ranges).unwrap();
        assert_eq!(p.channels[0].target_mean, 10.0);
        assert_eq!(p.channels[1].target_std, 3.0);
        assert_eq!(p.channels[2].span, 255.0);
        assert!(p.channels.iter().all(|c| c.start == 0.0));
    }

    #[test]
    fn empty_interval_is_rejected() {
        let mut ranges = RicaRanges::default();
        ranges.a.std = Interval::new(5.0, 1.0);
        let err = sample_rica_params(&mut ChaCha8Rng::seed_from_u64(0), &ranges).unwrap_err();
        assert!(err.to_string().contains("invalid range"));
    }

    #[test]
    fn sampling_is_seeded() {
        let r = RicaRanges::default();
        let a = sample_rica_params(&mut ChaCha8Rng::seed_from_u64(42), &r).unwrap();
        let b = sample_rica_params(&mut ChaCha8Rng::seed_from_u64(42), &r).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ranges_json_round_trip() {
        let r = RicaRanges::default().with_mode(RicaMode::Step2);
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.contains("\"mode\":\"step2\""));
        let back: RicaRanges = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
    }
}
