mod common;

use common::nonlinearity;
use proptest::prelude::*;
use sgspde::fields::{smooth_random_field, SmoothFieldParams};
use sgspde::nemytskii::lip_battery;
use sgspde::{apply_nemytskii, verify_lip, Complex64, Field, Grid, LipParams, NemytskiiFn, SobolevKatoIndex};

fn power(n: i32) -> NemytskiiFn {
    let lip = LipParams::new(0.0, 1.0, 0.0, 0.0).unwrap();
    NemytskiiFn::new(lip, move |_, _, w| w.powi(n))
}

#[test]
fn power_nonlinearities_scale_like_the_algebra_bound() {
    let g = Grid::new(1, 64, 8.0).unwrap();
    let idx = SobolevKatoIndex::new(0.0, 1.0);
    for n in [2, 3] {
        let f = power(n);
        let c_hat: Vec<f64> = [1.0, 2.0, 4.0]
            .iter()
            .map(|&r| {
                let pairs = lip_battery(g, idx, r, 12, 21, None).unwrap();
                verify_lip(&f, &pairs, &[0.0]).unwrap().c_hat
            })
            .collect();
        let allowed = 2f64.powi(n - 1) * 1.5;
        for w in c_hat.windows(2) {
            assert!(w[1] / w[0] <= allowed, "n = {n}: {c_hat:?}");
        }
    }
}

#[test]
fn linear_maps_have_equal_lipschitz_and_homogeneous_constants() {
    let g = Grid::new(1, 64, 8.0).unwrap();
    let lip = LipParams::new(0.5, 0.5, 0.0, 0.0).unwrap();
    let f = NemytskiiFn::new(lip, |t, x, w| Complex64::new((1.0 + t) / (1.0 + x[0] * x[0]), 0.0) * w + (-x[0] * x[0]).exp());
    let pairs = lip_battery(g, lip.source(), 2.0, 10, 5, None).unwrap();
    let r = verify_lip(&f, &pairs, &[0.0, 0.5]).unwrap();
    for t in &r.per_time {
        assert!((t.c_hat_lipschitz - t.c_hat_homogeneous).abs() < 1e-10, "{t:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn application_is_pointwise(seed in 0u64..1000, t in 0.0f64..2.0) {
        let g = Grid::new(1, 32, 4.0).unwrap();
        let w = smooth_random_field(g, seed, SmoothFieldParams { real: false, ..Default::default() }).unwrap();
        let f = nonlinearity("sin(t) * <x>^(-1) * u^2 - u");
        let out = apply_nemytskii(&f, t, &w).unwrap();
        for j in 0..g.len() {
            prop_assert_eq!(out.values()[j], f.eval(t, &[g.coordinate(j)], w.values()[j]));
        }
    }

    #[test]
    fn real_functions_keep_real_fields_real(seed in 0u64..1000) {
        let g = Grid::new(1, 32, 4.0).unwrap();
        let w = smooth_random_field(g, seed, SmoothFieldParams::default()).unwrap();
        let out = apply_nemytskii(&nonlinearity("-u^3 + exp(-x^2)"), 0.0, &w).unwrap();
        prop_assert_eq!(out.max_imag(), 0.0);
        prop_assert!(out.is_finite());
        let _ = Field::zeros(g);
    }
}
