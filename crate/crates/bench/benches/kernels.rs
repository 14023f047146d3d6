use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use sgspde::fields::{gaussian, smooth_random_field, SmoothFieldParams};
use sgspde::numeric::bracket_pow;
use sgspde::{
    apply_op, forward_dft, CauchyProblemSpec, Complex64, Grid, LipParams, MildSolver, NemytskiiFn, Order, SgSymbol,
    SobolevKatoIndex, SolverConfig, SpectralMeasure,
};

fn c(v: f64) -> Complex64 {
    Complex64::new(v, 0.0)
}

fn dft(cr: &mut Criterion) {
    let mut group = cr.benchmark_group("forward_dft");
    for (d, n) in [(1, 256), (2, 64)] {
        let g = Grid::new(d, n, 8.0).unwrap();
        let u = smooth_random_field(g, 1, SmoothFieldParams::default()).unwrap();
        group.bench_with_input(BenchmarkId::new(format!("d{d}"), n), &u, |b, u| b.iter(|| forward_dft(black_box(u)).unwrap()));
    }
    group.finish();
}

fn apply(cr: &mut Criterion) {
    let g = Grid::new(1, 128, 10.0).unwrap();
    let u = smooth_random_field(g, 2, SmoothFieldParams::default()).unwrap();
    let multiplier = SgSymbol::multiplier(Order::new(0.0, 2.0), |_, xi| c(bracket_pow(xi, 2.0)));
    let separable = SgSymbol::separable(Order::new(2.0, 2.0), |_, x| c(bracket_pow(x, 2.0)), |_, xi| c(bracket_pow(xi, 2.0)));
    let dense = SgSymbol::general(Order::new(2.0, 2.0), |_, x, xi| c(bracket_pow(x, 2.0) * bracket_pow(xi, 2.0)));
    let mut group = cr.benchmark_group("apply_op_n128");
    for (name, a) in [("multiplier", &multiplier), ("separable", &separable), ("dense", &dense)] {
        group.bench_function(name, |b| b.iter(|| apply_op(a, 0.0, black_box(&u)).unwrap()));
    }
    group.finish();
}

fn picard(cr: &mut Criterion) {
    let g = Grid::new(1, 64, 8.0).unwrap();
    let gen = SgSymbol::separable(Order::new(2.0, 2.0), |_, x| c(bracket_pow(x, 2.0)), |_, xi| c(bracket_pow(xi, 2.0)))
        .time_independent()
        .with_hypo_order(Order::new(2.0, 2.0))
        .unwrap();
    let spec = CauchyProblemSpec {
        generator: gen,
        gamma: NemytskiiFn::new(LipParams::default(), |_, _, u| -u * u * u),
        sigma: NemytskiiFn::new(LipParams::default(), |_, _, u| 0.2 * u),
        u0: gaussian(g, 0.2, 0.0, 1.0).unwrap(),
        measure: SpectralMeasure::from_density(g, |xi| bracket_pow(xi, -2.0)).unwrap(),
        horizon: 0.2,
        index: SobolevKatoIndex::new(0.0, 0.0),
        kappa: 0.0,
        lambda: 0.25,
    };
    let config = SolverConfig {
        dt: 0.01,
        modes: 16,
        ..SolverConfig::default()
    };
    let s = MildSolver::new(spec, config).unwrap();
    let path = s.noise_path(0).unwrap();
    let v0 = s.free_evolution().unwrap();
    cr.bench_function("picard_map_sg_heat_n64_20_steps", |b| b.iter(|| s.picard_map(&path, black_box(&v0)).unwrap()));
}

criterion_group!(benches, dft, apply, picard);
criterion_main!(benches);
