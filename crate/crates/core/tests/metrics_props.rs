use proptest::prelude::*;
use radfield_core::metrics::{mse, psnr, psnr_from_mse, ssim};
use radfield_core::ImageF;

fn image(w: usize, h: usize, c: usize) -> impl Strategy<Value = ImageF> {
    prop::collection::vec(0.0f64..1.0, w * h * c).prop_map(move |d| ImageF::from_vec(w, h, c, d).unwrap())
}

fn pair() -> impl Strategy<Value = (ImageF, ImageF)> {
    (11usize..20, 11usize..20, prop::sample::select(vec![1usize, 3]))
        .prop_flat_map(|(w, h, c)| (image(w, h, c), image(w, h, c)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn ssim_self_is_one((a, _) in pair()) {
        prop_assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_symmetric_and_bounded((a, b) in pair()) {
        let s = ssim(&a, &b, 1.0).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert!((s - ssim(&b, &a, 1.0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn shift_lowers_ssim((a, _) in pair(), shift in 0.05f64..0.5) {
        let mut b = a.clone();
        b.data_mut().iter_mut().for_each(|v| *v += shift);
        prop_assert!(ssim(&a, &b, 1.0).unwrap() < 1.0);
    }

    #[test]
    fn psnr_decreases_with_mse(m in 1e-6f64..1.0, f in 1.01f64..10.0) {
        prop_assert!(psnr_from_mse(m * f, 1.0) < psnr_from_mse(m, 1.0));
    }

    #[test]
    fn mse_symmetric((a, b) in pair()) {
        prop_assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
        prop_assert!(psnr(&a, &b, 1.0).unwrap().is_finite());
    }
}
