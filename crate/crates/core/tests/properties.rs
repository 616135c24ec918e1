use nixnet::maskgen::{mask_coverage, random_irregular_mask, to_composite_convention};
use nixnet::metrics::{iou, miou_masks};
use nixnet::simulate::composite;
use nixnet::srm::{noise_residual_with, residual_tensor, SrmConfig};
use nixnet::train::{focal_loss, focal_loss_tensor, EarlyStopping};
use nixnet::{BinaryMask, Error, Image, MaskParams, ProbabilityMap};
use proptest::prelude::*;
use tch::Tensor;

fn mask_strategy(h: usize, w: usize) -> impl Strategy<Value = BinaryMask> {
    proptest::collection::vec(0u8..2, h * w).prop_map(move |d| BinaryMask::new(h, w, d).unwrap())
}

fn mask_pair() -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    (1usize..12, 1usize..12).prop_flat_map(|(h, w)| (mask_strategy(h, w), mask_strategy(h, w)))
}

fn image_strategy(h: usize, w: usize) -> impl Strategy<Value = Image> {
    proptest::collection::vec(0.0f32..=1.0, h * w * 3)
        .prop_map(move |d| Image::new(h, w, d).unwrap())
}

/// Mask-based IoU by explicit counting, with the both-empty case as 1.
fn counted_iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for r in 0..a.height() {
        for c in 0..a.width() {
            let (x, y) = (a.get(r, c), b.get(r, c));
            inter += (x && y) as usize;
            union += (x || y) as usize;
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn iou_is_symmetric_bounded_and_counted((a, b) in mask_pair()) {
        let ab = iou(&a, &b).unwrap();
        prop_assert_eq!(ab, iou(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(ab, counted_iou(&a, &b));
        prop_assert_eq!(iou(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn miou_is_the_mean_of_per_image_ious(pairs in proptest::collection::vec(mask_pair(), 1..6)) {
        let r = miou_masks(&pairs).unwrap();
        let ious: Vec<f64> = pairs.iter().map(|(p, g)| counted_iou(p, g)).collect();
        prop_assert_eq!(&r.per_image_iou, &ious);
        let mean = ious.iter().sum::<f64>() / ious.len() as f64;
        prop_assert!((r.miou - mean).abs() < 1e-12);
    }

    #[test]
    fn focal_loss_is_nonnegative_and_routes_agree(
        probs in proptest::collection::vec(0.0f32..=1.0, 16),
        target in mask_strategy(4, 4),
        gamma in 0.0f64..5.0,
    ) {
        let p = ProbabilityMap::new(4, 4, probs.clone()).unwrap();
        let scalar = focal_loss(&p, &target, gamma).unwrap();
        prop_assert!(scalar >= 0.0);
        if probs.iter().zip(target.data()).any(|(&pv, &t)| pv != t as f32) {
            prop_assert!(scalar > 0.0);
        }
        let pt = Tensor::from_slice(&probs).to_kind(tch::Kind::Double).view([1, 1, 4, 4]);
        let tt = target.to_tensor().to_kind(tch::Kind::Double).view([1, 1, 4, 4]);
        let tensor = focal_loss_tensor(&pt, &tt, gamma).double_value(&[]);
        prop_assert!((scalar - tensor).abs() <= 1e-9 * scalar.max(1.0), "{} vs {}", scalar, tensor);
    }

    #[test]
    fn compositing_keeps_real_pixels(
        (real, generated, m) in (4usize..16, 4usize..16).prop_flat_map(|(h, w)| {
            (image_strategy(h, w), image_strategy(h, w), mask_strategy(h, w))
        })
    ) {
        let x = composite(&real, &generated, &m).unwrap();
        for r in 0..real.height() {
            for c in 0..real.width() {
                let want = if m.get(r, c) { generated.pixel(r, c) } else { real.pixel(r, c) };
                for ch in 0..3 {
                    prop_assert_eq!(x.pixel(r, c)[ch].to_bits(), want[ch].to_bits());
                }
            }
        }
    }

    #[test]
    fn composite_polarity_round_trips(m in mask_strategy(6, 7)) {
        prop_assert_eq!(to_composite_convention(&to_composite_convention(&m)), m);
    }

    #[test]
    fn residual_is_linear_and_flat_on_constants(
        (x, y) in (image_strategy(9, 11), image_strategy(9, 11)),
        a in -2.0f32..2.0,
        b in -2.0f32..2.0,
        level in 0.0f32..=1.0,
    ) {
        let cfg = SrmConfig::linear();
        let mixed: Vec<f32> = x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect();
        let mixed = Image::new(9, 11, mixed).unwrap();
        let (rx, ry, rm) = (
            noise_residual_with(&x, &cfg).unwrap(),
            noise_residual_with(&y, &cfg).unwrap(),
            noise_residual_with(&mixed, &cfg).unwrap(),
        );
        for i in 0..rm.data().len() {
            let (p, q) = (a * rx.data()[i], b * ry.data()[i]);
            // Each route rounds its f64 sum once to f32.
            let tol = 1e-6 * (1.0 + p.abs() + q.abs());
            prop_assert!((rm.data()[i] - (p + q)).abs() <= tol, "{} vs {}", rm.data()[i], p + q);
        }
        for cfg in [SrmConfig::default(), cfg] {
            let flat = noise_residual_with(&Image::filled(9, 11, level), &cfg).unwrap();
            prop_assert!(flat.max_abs() <= 1e-6);
        }
    }

    #[test]
    fn residual_routes_agree(x in image_strategy(8, 10)) {
        for cfg in [SrmConfig::default(), SrmConfig::linear()] {
            let scalar = noise_residual_with(&x, &cfg).unwrap();
            let t = residual_tensor(&x.to_tensor(), &cfg).unwrap();
            let t: Vec<f32> = Vec::try_from(t.flatten(0, -1)).unwrap();
            // Tensor layout is channel-major, the residual is pixel-interleaved.
            for ch in 0..3 {
                for r in 0..8 {
                    for c in 0..10 {
                        let tv = t[(ch * 8 + r) * 10 + c];
                        prop_assert!((scalar.get(r, c, ch) - tv).abs() <= 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn masks_are_deterministic_and_respect_coverage(seed in any::<u64>(), lo in 0.02f64..0.4, span in 0.05f64..0.4) {
        let params = MaskParams {
            coverage_range: [lo, (lo + span).min(0.95)],
            ..MaskParams::default()
        }
        .with_seed(seed);
        let first = random_irregular_mask(40, 48, &params);
        let again = random_irregular_mask(40, 48, &params);
        match (first, again) {
            (Ok(m), Ok(n)) => {
                prop_assert_eq!(&m, &n);
                let cov = mask_coverage(&m);
                prop_assert!(cov >= params.coverage_range[0] && cov <= params.coverage_range[1]);
            }
            (Err(Error::CoverageUnsatisfiable { .. }), Err(Error::CoverageUnsatisfiable { .. })) => {}
            (a, b) => prop_assert!(false, "unexpected {:?} / {:?}", a.err(), b.err()),
        }
    }

    #[test]
    fn early_stopping_keeps_the_first_maximum(
        scores in proptest::collection::vec(0.0f64..1.0, 1..20),
        patience in 1usize..5,
    ) {
        let mut es = EarlyStopping::new(patience);
        let mut seen = 0;
        for (epoch, &s) in scores.iter().enumerate() {
            es.observe(epoch + 1, s);
            seen = epoch + 1;
            if es.should_stop() {
                break;
            }
        }
        let prefix = &scores[..seen];
        let max = prefix.iter().cloned().fold(f64::MIN, f64::max);
        let first = prefix.iter().position(|&s| s == max).unwrap() + 1;
        prop_assert_eq!(es.best(), Some((first, max)));
        if seen < scores.len() {
            prop_assert_eq!(seen - first, patience);
        }
    }
}
