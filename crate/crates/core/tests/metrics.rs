mod support;

use mimic_core::metrics::*;
use mimic_core::{Error, Image};
use proptest::prelude::*;
use support::*;

fn img(h: usize, w: usize, v: &[f64]) -> Image<f64> {
    Image::new(h, w, v.to_vec()).unwrap()
}

#[test]
fn mse_examples() {
    let mut r = rng(1);
    let x = random_image(16, 16, &mut r);
    assert_eq!(mse(&x, &x).unwrap(), 0.0);
    assert_eq!(mse(&Image::zeros(4, 4), &Image::filled(4, 4, 1.0)).unwrap(), 1.0);
    let y = random_image(16, 16, &mut r);
    assert!((mse(&x, &y).unwrap() - mse_oracle(&x, &y)).abs() < 1e-12);
}

#[test]
fn mae_examples() {
    let mut r = rng(2);
    let x = random_image(16, 16, &mut r);
    assert_eq!(mae(&x, &x).unwrap(), 0.0);
    assert_eq!(mae(&img(1, 2, &[0.0, 0.5]), &img(1, 2, &[0.5, 1.0])).unwrap(), 0.5);
    let y = random_image(16, 16, &mut r);
    assert!((mae(&x, &y).unwrap() - mae_oracle(&x, &y)).abs() < 1e-12);
}

#[test]
fn shape_mismatch_reports_both_shapes() {
    let err = mse(&Image::<f64>::zeros(3, 4), &Image::zeros(4, 3)).unwrap_err();
    match err {
        Error::ShapeMismatch { left, right } => {
            assert_eq!(left, vec![3, 4]);
            assert_eq!(right, vec![4, 3]);
        }
        other => panic!("unexpected {other}"),
    }
    assert!(mae(&Image::<f64>::zeros(3, 4), &Image::zeros(4, 3)).is_err());
}

#[test]
fn psnr_examples() {
    assert!((psnr_from_mse(0.01, 1.0).unwrap().db() - 20.0).abs() < 1e-12);
    assert!((psnr_from_mse(1e-4, 1.0).unwrap().db() - 40.0).abs() < 1e-12);
    let x = Image::filled(4, 4, 0.3);
    assert_eq!(psnr(&x, &x, 1.0).unwrap(), Psnr::Infinite);
    assert!(psnr(&x, &x, 0.0).is_err());
    let mut r = rng(3);
    let (a, b) = (random_image(16, 16, &mut r), random_image(16, 16, &mut r));
    let direct = psnr(&a, &b, 1.0).unwrap().db();
    let composed = 20.0 * (1.0 / mse_oracle(&a, &b).sqrt()).log10();
    assert!((direct - composed).abs() < 1e-9);
}

#[test]
fn psnr_strictly_decreases_with_mse() {
    let grid: Vec<f64> = (1..200).map(|i| i as f64 * 5e-4).collect();
    for pair in grid.windows(2) {
        assert!(psnr_from_mse(pair[0], 1.0).unwrap().db() > psnr_from_mse(pair[1], 1.0).unwrap().db());
    }
}

#[test]
fn ssim_identity_is_one() {
    let p = SsimParams::new(1.0);
    let x = random_image(20, 24, &mut rng(4));
    let r = ssim(&x, &x, &p).unwrap();
    assert!((r.mean_ssim - 1.0).abs() < 1e-9);
    let (l, cs) = ssim_components(&x, &x, &p).unwrap();
    assert!((l - 1.0).abs() < 1e-12 && (cs - 1.0).abs() < 1e-12);
}

#[test]
fn ssim_constant_images_analytic() {
    let p = SsimParams::new(1.0);
    let x: Image<f64> = Image::filled(16, 16, 0.5);
    let y: Image<f64> = Image::filled(16, 16, 0.25);
    let expected: f64 = (2.0 * 0.125 + 1e-4) / (0.3125 + 1e-4);
    let r = ssim(&x, &y, &p).unwrap();
    assert!((r.mean_ssim - expected).abs() < 1e-12);
    assert!((r.mean_ssim - 0.8001).abs() < 1e-4);
    let (l, cs) = ssim_components(&x, &y, &p).unwrap();
    assert!((l - expected).abs() < 1e-12);
    assert!((cs - 1.0).abs() < 1e-9);
}

#[test]
fn ssim_matches_brute_force_windows() {
    let p = SsimParams::new(1.0);
    let u = SsimParams::uniform(7, 1.0).unwrap();
    for seed in 0..5 {
        let mut r = rng(100 + seed);
        let (x, y) = (random_image(32, 32, &mut r), random_image(32, 32, &mut r));
        for params in [&p, &u] {
            let got = ssim(&x, &y, params).unwrap();
            let (s, l, cs) = ssim_oracle(&x, &y, params);
            assert!((got.mean_ssim - s).abs() < 1e-9);
            assert!((got.mean_l - l).abs() < 1e-9);
            assert!((got.mean_cs - cs).abs() < 1e-9);
        }
    }
}

#[test]
fn ssim_decomposition_identity() {
    let p = SsimParams::new(1.0);
    let mut r = rng(5);
    let (x, y) = (random_image(32, 32, &mut r), random_image(32, 32, &mut r));
    let full = ssim_with_map(&x, &y, &p).unwrap();
    let (lm, csm) = ssim_component_maps(&x, &y, &p).unwrap();
    let prod: f64 = lm.data().iter().zip(csm.data()).map(|(a, b)| a * b).sum::<f64>() / lm.len() as f64;
    assert!((prod - full.mean_ssim).abs() < 1e-9);
    let map = full.map.unwrap();
    assert_eq!(map.shape(), [22, 22]);
}

#[test]
fn ssim_rejects_small_images() {
    let p = SsimParams::new(1.0);
    match ssim(&Image::<f64>::zeros(10, 20), &Image::zeros(10, 20), &p).unwrap_err() {
        Error::ImageTooSmall { min, .. } => assert_eq!(min, 11),
        other => panic!("unexpected {other}"),
    }
    assert!(ssim_loss_gradient(&Image::<f64>::zeros(10, 20), &Image::zeros(10, 20), &p).is_err());
}

#[test]
fn ssim_params_invariants() {
    let p = SsimParams::new(2.0);
    assert_eq!(p.window_extent(), 11);
    assert!((p.window_weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!((p.c1() - (0.01f64 * 2.0).powi(2)).abs() < 1e-15);
    assert!((p.c2() - (0.03f64 * 2.0).powi(2)).abs() < 1e-15);
    assert_eq!(p.c3(), p.c2() / 2.0);
    assert!(SsimParams::uniform(4, 1.0).is_err());
    assert!(SsimParams::uniform(1, 1.0).is_err());
    assert!(SsimParams::with_weights(3, vec![0.2; 9], 1.0).is_err());
}

#[test]
fn ssim_gradient_at_optimum_matches_differences() {
    let p = SsimParams::new(1.0);
    let x = random_image(16, 16, &mut rng(6));
    let g = ssim_loss_gradient(&x, &x, &p).unwrap();
    let loss = |z: &Image<f64>| 1.0 - ssim(z, &x, &p).unwrap().mean_ssim;
    assert!(check_image_gradient(loss, &x, &g, 1e-4, 1e-6) < 1e-3);
}

#[test]
fn ssim_gradient_matches_differences_over_seeds() {
    let p = SsimParams::new(1.0);
    for seed in 0..20 {
        let mut r = rng(200 + seed);
        let (x, y) = (random_image(16, 16, &mut r), random_image(16, 16, &mut r));
        let g = ssim_loss_gradient(&x, &y, &p).unwrap();
        let loss = |z: &Image<f64>| 1.0 - ssim(z, &y, &p).unwrap().mean_ssim;
        let err = check_image_gradient(loss, &x, &g, 1e-4, 1e-6);
        assert!(err < 1e-3, "seed {seed}: relative error {err}");
    }
}

#[test]
fn mse_gradient_vanishes_at_optimum() {
    let x = random_image(8, 8, &mut rng(7));
    let (_, g) = mse_loss_and_gradient(&x, &x).unwrap();
    assert!(g.data().iter().all(|&v| v == 0.0));
}

#[test]
fn loss_precision_self_consistency() {
    let p = SsimParams::new(1.0);
    let mut r = rng(8);
    let (x, y) = (random_image(24, 24, &mut r), random_image(24, 24, &mut r));
    let wide = ssim(&x, &y, &p).unwrap().mean_ssim;
    let narrow = ssim(&x.cast::<f32>(), &y.cast::<f32>(), &p).unwrap().mean_ssim as f64;
    assert!((wide - narrow).abs() < 1e-6);
}

fn pair(max: usize) -> impl Strategy<Value = (Image<f64>, Image<f64>)> {
    (11..=max, 11..=max).prop_flat_map(|(h, w)| {
        (
            proptest::collection::vec(0.0..=1.0f64, h * w),
            proptest::collection::vec(0.0..=1.0f64, h * w),
        )
            .prop_map(move |(a, b)| (Image::new(h, w, a).unwrap(), Image::new(h, w, b).unwrap()))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn metrics_are_symmetric((x, y) in pair(20)) {
        let p = SsimParams::new(1.0);
        prop_assert!((ssim(&x, &y, &p).unwrap().mean_ssim - ssim(&y, &x, &p).unwrap().mean_ssim).abs() < 1e-12);
        prop_assert!((mse(&x, &y).unwrap() - mse(&y, &x).unwrap()).abs() < 1e-12);
        prop_assert!((mae(&x, &y).unwrap() - mae(&y, &x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn per_window_ssim_is_bounded((x, y) in pair(20)) {
        let map = ssim_with_map(&x, &y, &SsimParams::new(1.0)).unwrap().map.unwrap();
        prop_assert!(map.data().iter().all(|&v| v <= 1.0 + 1e-9));
    }

    #[test]
    fn decomposition_holds((x, y) in pair(20)) {
        let p = SsimParams::new(1.0);
        let s = ssim(&x, &y, &p).unwrap().mean_ssim;
        let (lm, csm) = ssim_component_maps(&x, &y, &p).unwrap();
        let prod: f64 = lm.data().iter().zip(csm.data()).map(|(a, b)| a * b).sum::<f64>() / lm.len() as f64;
        prop_assert!((prod - s).abs() < 1e-9);
    }

    #[test]
    fn window_variances_are_non_negative((x, y) in pair(16)) {
        let (_, _, stats) = window_stats(&x, &y, &SsimParams::new(1.0)).unwrap();
        prop_assert!(stats.iter().all(|s| s.var_x >= -1e-9 && s.var_y >= -1e-9));
    }
}
