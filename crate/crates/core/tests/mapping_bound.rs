use sgspde::fields::{smooth_random_field, SmoothFieldParams};
use sgspde::numeric::bracket_pow;
use sgspde::sgcalc::{mapping_bound_ratio, seminorm_estimate, MAPPING_BOUND_CONSTANT};
use sgspde::{Complex64, Grid, Order, SgSymbol, SobolevKatoIndex};

fn c(v: f64) -> Complex64 {
    Complex64::new(v, 0.0)
}

pub fn battery() -> Vec<SgSymbol> {
    vec![
        SgSymbol::multiplier(Order::new(0.0, 2.0), |_, xi| c(bracket_pow(xi, 2.0))),
        SgSymbol::pointwise(Order::new(1.0, 0.0), |_, x| c(bracket_pow(x, 1.0))),
        SgSymbol::separable(Order::new(2.0, 2.0), |_, x| c(bracket_pow(x, 2.0)), |_, xi| c(bracket_pow(xi, 2.0))),
        SgSymbol::general(Order::new(0.0, 1.0), |_, x, xi| {
            let phase = x[0] * xi[0] / (bracket_pow(x, 1.0) * bracket_pow(xi, 1.0));
            c((2.0 + phase.cos()) * bracket_pow(xi, 1.0))
        }),
        SgSymbol::separable(Order::new(-1.0, -1.0), |_, x| c(bracket_pow(x, -1.0)), |_, xi| c(bracket_pow(xi, -1.0))),
    ]
}

#[test]
fn mapping_bound_holds_on_the_battery() {
    let g = Grid::new(1, 128, 16.0).unwrap();
    let idx = SobolevKatoIndex::new(1.0, 1.0);
    let mut worst: f64 = 0.0;
    let mut violations = 0;
    for (i, a) in battery().iter().enumerate() {
        let semi = seminorm_estimate(a, 1, &g, 0.0).unwrap();
        for seed in 0..50 {
            let params = SmoothFieldParams {
                bandwidth: 0.5 + (seed % 5) as f64 * 0.5,
                center: ((seed % 7) as f64 - 3.0) * 0.5,
                ..Default::default()
            };
            let u = smooth_random_field(g, 1000 * i as u64 + seed, params).unwrap();
            let r = mapping_bound_ratio(a, 0.0, &u, idx, semi).unwrap();
            worst = worst.max(r);
            if r > MAPPING_BOUND_CONSTANT {
                violations += 1;
            }
        }
    }
    println!("largest mapping-bound ratio: {worst:.6}");
    assert_eq!(violations, 0, "largest ratio {worst}");
}
