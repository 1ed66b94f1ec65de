use super::ops::*;
use super::*;

fn noise_image(side: usize, seed: u64) -> Image {
    let mut rng = Rng::new(seed, 0);
    let data = (0..3 * side * side).map(|_| rng.uniform()).collect();
    Image::new(side, side, data).unwrap()
}

#[test]
fn solarize_examples() {
    let img = Image::new(1, 1, vec![0.0, 1.0, 128.0 / 255.0]).unwrap();
    let out = solarize(&img, 128.0 / 255.0);
    assert_eq!(out.data()[0], 0.0);
    assert_eq!(out.data()[1], 0.0);
    assert!((out.data()[2] - 127.0 / 255.0).abs() < 1e-15);
}

#[test]
fn standard_pipeline_matches_table() {
    let p = AugPipeline::standard(16);
    let probs: Vec<(&str, f64)> = p.steps.iter().map(|s| (s.aug.name(), s.prob)).collect();
    assert_eq!(
        probs,
        vec![
            ("crop", 1.0),
            ("flip", 0.5),
            ("jitter", 0.8),
            ("gray", 0.2),
            ("blur", 0.5),
            ("solarize", 0.2)
        ]
    );
    match p.steps[0].aug {
        Augmentation::RandomResizedCrop { scale, .. } => assert_eq!(scale, (0.08, 1.0)),
        _ => unreachable!(),
    }
    match p.steps[2].aug {
        Augmentation::ColorJitter(s) => {
            assert_eq!((s.brightness, s.contrast, s.saturation, s.hue), (0.4, 0.4, 0.2, 0.1))
        }
        _ => unreachable!(),
    }
    match p.steps[4].aug {
        Augmentation::GaussianBlur { sigma } => assert_eq!(sigma, (0.1, 2.0)),
        _ => unreachable!(),
    }
    match p.steps[5].aug {
        Augmentation::Solarize { threshold } => assert_eq!(threshold, 128.0 / 255.0),
        _ => unreachable!(),
    }
}

#[test]
fn full_scale_crop_is_plain_resize() {
    let img = noise_image(12, 1);
    let mut rng = Rng::new(0, 0);
    let out = random_resized_crop(&img, (1.0, 1.0), (1.0, 1.0), 8, &mut rng);
    assert_eq!(out, resize(&img, 8));
    let same = random_resized_crop(&img, (1.0, 1.0), (1.0, 1.0), 12, &mut rng);
    assert_eq!(same, img);
}

#[test]
fn crop_output_side_and_determinism() {
    let img = noise_image(20, 2);
    for seed in 0..50 {
        let a = random_resized_crop(&img, (0.08, 1.0), (0.75, 4.0 / 3.0), 16, &mut Rng::new(seed, 3));
        let b = random_resized_crop(&img, (0.08, 1.0), (0.75, 4.0 / 3.0), 16, &mut Rng::new(seed, 3));
        assert_eq!((a.height(), a.width()), (16, 16));
        assert_eq!(a, b);
    }
}

#[test]
fn infeasible_crop_falls_back_to_full_image() {
    // an area fraction above 1 can never fit
    let b = sample_crop(10, 10, (4.0, 4.0), (1.0, 1.0), &mut Rng::new(0, 0));
    assert_eq!(
        b,
        CropBox {
            top: 0,
            left: 0,
            height: 10,
            width: 10
        }
    );
}

#[test]
fn zero_strength_jitter_is_identity() {
    let img = noise_image(8, 4);
    let s = JitterStrength {
        brightness: 0.0,
        contrast: 0.0,
        saturation: 0.0,
        hue: 0.0,
    };
    assert_eq!(color_jitter(&img, &s, &mut Rng::new(1, 1)), img);
}

#[test]
fn grayscale_is_idempotent() {
    let g = grayscale(&noise_image(8, 5));
    let gg = grayscale(&g);
    for (a, b) in g.data().iter().zip(gg.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn hflip_is_involution() {
    let img = noise_image(7, 6);
    assert_eq!(hflip(&hflip(&img)), img);
}

#[test]
fn blur_kernel_radius() {
    assert_eq!(gaussian_kernel(0.1).len(), 3);
    assert_eq!(gaussian_kernel(2.0).len(), 9);
    assert!((gaussian_kernel(1.3).iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn identity_pipeline_returns_source() {
    let img = noise_image(16, 7);
    let p = AugPipeline::identity(16);
    let (a, b) = p.two_views(&img, &Rng::new(3, 3), 11);
    assert_eq!(a, img);
    assert_eq!(b, img);
}

#[test]
fn two_views_are_reproducible_and_distinct() {
    let img = noise_image(20, 8);
    let p = AugPipeline::standard(16);
    let (a1, b1) = p.two_views(&img, &Rng::new(9, 1), 42);
    let (a2, b2) = p.two_views(&img, &Rng::new(9, 1), 42);
    assert_eq!(a1, a2);
    assert_eq!(b1, b2);
    assert_ne!(a1, b1);
}

#[test]
fn removal_ladder_order() {
    let p = AugPipeline::standard(16);
    let rungs: Vec<Vec<&str>> = (0..=4).map(|r| p.removal_rung(r).unwrap().names()).collect();
    assert_eq!(rungs[0], vec!["crop", "flip", "jitter", "gray", "blur", "solarize"]);
    assert_eq!(rungs[1], vec!["crop", "flip", "jitter", "gray", "blur"]);
    assert_eq!(rungs[2], vec!["crop", "flip", "jitter", "gray"]);
    assert_eq!(rungs[3], vec!["crop", "flip", "jitter"]);
    assert_eq!(rungs[4], vec!["crop", "flip"]);
    assert!(p.removal_rung(5).is_err());
}

#[test]
fn removing_an_augmentation_keeps_other_draws() {
    let img = noise_image(20, 9);
    let full = AugPipeline::from_names(&["crop", "flip", "solarize"], 16).unwrap();
    let reduced = full.without("solarize");
    let rng = Rng::new(5, 5);
    for sample in 0..40 {
        let plan_full = full.plan(&rng, sample, 0);
        let plan_red = reduced.plan(&rng, sample, 0);
        assert_eq!(&plan_full[..2], &plan_red[..]);
        if !plan_full[2] {
            assert_eq!(full.apply(&img, &rng, sample, 0), reduced.apply(&img, &rng, sample, 0));
        }
    }
}

#[test]
fn firing_rates_match_probabilities() {
    let p = AugPipeline::standard(16);
    let rng = Rng::new(2024, 0);
    let n = 100_000u64;
    let mut counts = vec![0usize; p.steps.len()];
    for sample in 0..n {
        for (c, fired) in counts.iter_mut().zip(p.plan(&rng, sample, sample % 2)) {
            *c += usize::from(fired);
        }
    }
    for (step, c) in p.steps.iter().zip(counts) {
        let rate = c as f64 / n as f64;
        assert!((rate - step.prob).abs() <= 0.01, "{}: {rate} vs {}", step.aug.name(), step.prob);
    }
}

#[test]
fn unknown_augmentation_is_rejected() {
    assert!(AugPipeline::from_names(&["crop", "mixup"], 16).is_err());
}

proptest::proptest! {
    #[test]
    fn outputs_stay_in_unit_range(seed in 0u64..1000, sample in 0u64..1000) {
        let img = noise_image(12, seed);
        let p = AugPipeline::standard(10);
        let (a, b) = p.two_views(&img, &Rng::new(seed, 1), sample);
        proptest::prop_assert!(a.in_unit_range() && b.in_unit_range());
        proptest::prop_assert_eq!((a.height(), a.width()), (10, 10));
        let mut r = Rng::new(seed, 2);
        let j = color_jitter(&img, &JitterStrength::default(), &mut r);
        proptest::prop_assert!(j.in_unit_range());
        proptest::prop_assert!(gaussian_blur(&img, (0.1, 2.0), &mut r).in_unit_range());
        proptest::prop_assert!(solarize(&img, 0.5).in_unit_range());
    }
}
