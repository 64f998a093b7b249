use dgaug::analysis::{histogram_of, range_overlap};
use dgaug::colorlab::{
    lab8_to_srgb, rica_step2, sample_rica_params_seeded, srgb_pixel_to_lab, lab_pixel_to_srgb, srgb_to_lab8, Channel,
    RgbImage, RicaRanges,
};
use dgaug::losses::kl_cycle_loss;
use dgaug::tensor::Tensor;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn srgb_lab_round_trip(r in any::<u8>(), g in any::<u8>(), b in any::<u8>()) {
        let back = lab_pixel_to_srgb(srgb_pixel_to_lab([r, g, b]));
        for (x, y) in [r, g, b].iter().zip(back) {
            prop_assert!((*x as i32 - y as i32).abs() <= 2);
        }
    }

    #[test]
    fn step2_spans_target_interval(seed in any::<u64>(), pixels in prop::collection::vec(any::<u8>(), 3 * 16)) {
        let img = srgb_to_lab8(&RgbImage::from_raw(4, 4, pixels).unwrap());
        let params = sample_rica_params_seeded(seed, &RicaRanges::default()).unwrap();
        let out = rica_step2(&img, &params);
        for c in [Channel::L, Channel::A, Channel::B] {
            let p = params.channel(c);
            let plane = out.channel(c);
            let lo = plane.iter().cloned().fold(f32::MAX, f32::min);
            let hi = plane.iter().cloned().fold(f32::MIN, f32::max);
            prop_assert!(lo as f64 >= p.start - 1e-3 && hi as f64 <= p.start + p.span + 1e-3, "{c:?}: [{lo}, {hi}] vs start={} span={}", p.start, p.span);
        }
    }

    #[test]
    fn kl_ignores_logit_shift(v in prop::collection::vec(-4.0f32..4.0, 12), w in prop::collection::vec(-4.0f32..4.0, 12), k in -5.0f32..5.0) {
        let p = Tensor::new(&[1, 3, 2, 2], v.clone()).unwrap();
        let q = Tensor::new(&[1, 3, 2, 2], w.clone()).unwrap();
        let shifted = Tensor::new(&[1, 3, 2, 2], w.iter().map(|x| x + k).collect()).unwrap();
        let a = kl_cycle_loss(&q, &p).unwrap().value();
        let b = kl_cycle_loss(&shifted, &p).unwrap().value();
        prop_assert!(a >= -1e-6);
        prop_assert!((a - b).abs() < 1e-4, "{a} vs {b}");
    }

    #[test]
    fn overlap_is_symmetric(s1 in any::<[u8; 3]>(), s2 in any::<[u8; 3]>(), s3 in any::<[u8; 3]>()) {
        let h1 = histogram_of(&[RgbImage::filled(4, 4, s1), RgbImage::filled(4, 4, s2)], Channel::A, 64).unwrap();
        let h2 = histogram_of(&[RgbImage::filled(4, 4, s3)], Channel::A, 64).unwrap();
        let ab = range_overlap(&h1, &h2).unwrap();
        let ba = range_overlap(&h2, &h1).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
    }
}

#[test]
fn image_round_trip_stays_within_two_levels() {
    let data: Vec<u8> = (0..64 * 64 * 3).map(|i| ((i * 7919) % 256) as u8).collect();
    let img = RgbImage::from_raw(64, 64, data).unwrap();
    let back = lab8_to_srgb(&srgb_to_lab8(&img));
    let worst = img.data().iter().zip(back.data()).map(|(a, b)| (*a as i32 - *b as i32).abs()).max().unwrap();
    approx::assert_abs_diff_eq!(worst as f64, 0.0, epsilon = 2.0);
}
