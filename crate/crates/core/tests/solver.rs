mod common;

use common::{heat, nonlinearity, sg_heat};
use sgspde::fields::gaussian;
use sgspde::numeric::bracket_pow;
use sgspde::solver::{check_hypotheses, CONTRACTION_THRESHOLD};
use sgspde::{
    sk_norm, CauchyProblemSpec, Complex64, Field, Grid, MildSolver, NemytskiiFn, SgSymbol, SobolevKatoIndex, SolverConfig,
    SpectralMeasure, StepProcess,
};

fn problem(g: Grid, generator: SgSymbol, gamma: NemytskiiFn, sigma: NemytskiiFn, horizon: f64) -> CauchyProblemSpec {
    CauchyProblemSpec {
        generator,
        gamma,
        sigma,
        u0: gaussian(g, 0.2, 0.0, 1.0).unwrap(),
        measure: SpectralMeasure::from_density(g, |xi| bracket_pow(xi, -2.0)).unwrap(),
        horizon,
        index: SobolevKatoIndex::new(0.0, 0.0),
        kappa: 0.0,
        lambda: 0.25,
    }
}

fn config(dt: f64, modes: usize, paths: usize) -> SolverConfig {
    SolverConfig {
        dt,
        modes,
        tolerance: 1e-10,
        max_iterations: 60,
        paths,
        seed: 3,
    }
}

fn sup_distance(a: &[Field], b: &[Field], idx: SobolevKatoIndex) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| sk_norm(&x.sub(y).unwrap(), idx).unwrap())
        .fold(0.0, f64::max)
}

#[test]
fn additive_noise_matches_the_discrete_ornstein_uhlenbeck_sum() {
    let g = Grid::new(1, 32, 5.0).unwrap();
    let mut spec = problem(g, heat(), NemytskiiFn::zero(), nonlinearity("1"), 0.2);
    spec.u0 = gaussian(g, 0.2, 0.0, 1.0).unwrap();
    let full = spec.measure.symmetric_dimension();
    let s = MildSolver::new(spec, config(4e-3, full, 2000)).unwrap();
    let m = s.mc_moments().unwrap();
    let v0 = s.free_evolution().unwrap();
    let w = s.spec().measure.mode_weights();
    for n in [m.times.len() / 2, m.times.len() - 1] {
        let mut oracle = sk_norm(&v0[n], SobolevKatoIndex::new(0.0, 0.0)).unwrap().powi(2);
        for (k, wk) in w.iter().enumerate() {
            let a = 1.0 + g.wavevector(k)[0].powi(2);
            oracle += wk * (1..=n).map(|j| s.dt() * (-2.0 * a * j as f64 * s.dt()).exp()).sum::<f64>();
        }
        let z = (m.mean[n] - oracle) / m.std_error[n];
        assert!(z.abs() < 4.0, "t = {}: mc {} oracle {oracle} z {z}", m.times[n], m.mean[n]);
    }
}

#[test]
fn isometry_holds_for_three_step_processes() {
    let g = Grid::new(1, 64, 8.0).unwrap();
    let idx = SobolevKatoIndex::new(0.5, 0.5);
    let weight = Field::from_real_fn(g, |x| bracket_pow(x, -1.0)).unwrap();

    let mut spec = problem(g, sg_heat(), NemytskiiFn::zero(), NemytskiiFn::zero(), 0.2);
    spec.index = idx;
    let s = MildSolver::new(spec.clone(), config(0.02, 16, 1)).unwrap();
    let propagated = StepProcess::multiplier(weight.clone(), s.steps(), Some(0.2));
    let times = s.times();
    let varying = StepProcess {
        sigma: times[..s.steps()]
            .iter()
            .map(|t| weight.scale(Complex64::new(1.0 + 2.0 * t, 0.0)))
            .collect(),
        propagate_to: None,
    };

    spec.measure = SpectralMeasure::dirac(g).unwrap();
    let dirac = MildSolver::new(spec, config(0.02, 1, 1)).unwrap();
    let one = StepProcess::multiplier(Field::constant(g, Complex64::new(1.0, 0.0)), dirac.steps(), None);

    for (solver, step) in [(&s, &propagated), (&s, &varying), (&dirac, &one)] {
        let r = solver.ito_isometry_test(step, 2000).unwrap();
        assert!(r.passes, "{r:?}");
    }
}

#[test]
fn linear_crosscheck_agrees_on_several_paths() {
    let g = Grid::new(1, 64, 10.0).unwrap();
    for sigma in ["1", "<x>^(-1)"] {
        let s = MildSolver::new(problem(g, heat(), NemytskiiFn::zero(), nonlinearity(sigma), 0.2), config(0.01, 32, 1)).unwrap();
        for path in 0..3 {
            let r = s.linear_crosscheck(path).unwrap();
            assert!(r.passes, "{sigma}, path {path}: {r:?}");
            let last = r.by_modes.last().unwrap().1;
            assert!(r.by_modes.iter().all(|&(_, e)| e >= last), "{r:?}");
        }
    }
}

#[test]
fn horizon_sweep_brackets_the_threshold() {
    let g = Grid::new(1, 32, 6.0).unwrap();
    let s = MildSolver::new(problem(g, heat(), nonlinearity("-20*u"), NemytskiiFn::zero(), 0.4), config(0.005, 8, 1)).unwrap();
    let est = s.estimate_t0().unwrap();
    assert!(est.t0 < 0.4);
    assert!(est.q_hat < CONTRACTION_THRESHOLD);
    let doubled = est.sweep.iter().find(|(t, _)| (t - 2.0 * est.t0).abs() < 1e-12).unwrap();
    assert!(doubled.1 >= CONTRACTION_THRESHOLD, "{est:?}");
    // smaller horizons keep contracting
    let half = s.with_horizon(est.t0 / 2.0).unwrap().estimate_t0().unwrap();
    assert_eq!(half.t0, est.t0 / 2.0);
}

#[test]
fn horizon_does_not_grow_with_lambda() {
    let g = Grid::new(1, 32, 6.0).unwrap();
    let mut t0 = Vec::new();
    for lambda in [0.1, 0.3, 0.45] {
        let mut spec = problem(g, heat(), nonlinearity("-20*u"), NemytskiiFn::zero(), 0.4);
        spec.lambda = lambda;
        t0.push(MildSolver::new(spec, config(0.005, 8, 1)).unwrap().estimate_t0().unwrap().t0);
    }
    assert!(t0.windows(2).all(|w| w[1] <= w[0]), "{t0:?}");
}

#[test]
fn drift_map_norm_halves_with_the_horizon() {
    let g = Grid::new(1, 32, 6.0).unwrap();
    let base = MildSolver::new(problem(g, heat(), nonlinearity("-u"), NemytskiiFn::zero(), 0.2), config(0.005, 8, 1)).unwrap();
    let norms: Vec<f64> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&h| base.with_horizon(h).unwrap().contraction_factor(9, 5, 1).unwrap())
        .collect();
    for w in norms.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.4..=2.6).contains(&ratio), "{norms:?}");
    }
}

#[test]
fn converged_solution_is_a_fixed_point_and_certified() {
    let g = Grid::new(1, 32, 6.0).unwrap();
    let sigma = nonlinearity("0.2*u");
    let s = MildSolver::new(problem(g, heat(), nonlinearity("-u^3"), sigma, 0.4), config(0.01, 8, 1)).unwrap();
    let est = s.estimate_t0().unwrap();
    let s = s.with_horizon(est.t0).unwrap();
    let path = s.noise_path(4).unwrap();
    let sol = s.solve_path(&path).unwrap();
    let image = s.picard_map(&path, &sol.states).unwrap();
    let idx = s.spec().index;
    assert!(sup_distance(&image, &sol.states, idx) <= 2.0 * s.config().tolerance);
    assert!(sol.q_hat < CONTRACTION_THRESHOLD);
    let cert = s.certify().unwrap();
    assert!(cert.holds, "{cert:?}");
    let uniq = s.uniqueness_check(&path).unwrap();
    assert!(uniq.holds && uniq.guesses == 3, "{uniq:?}");
}

#[test]
fn moments_are_identical_across_thread_counts() {
    let g = Grid::new(1, 32, 6.0).unwrap();
    let s = MildSolver::new(problem(g, sg_heat(), nonlinearity("-u^3"), nonlinearity("0.3*u + exp(-x^2)"), 0.1), config(0.01, 8, 24)).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| s.mc_moments().unwrap())
    };
    let (a, b) = (run(1), run(4));
    for (x, y) in a.mean.iter().zip(&b.mean).chain(a.variance.iter().zip(&b.variance)) {
        assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()), "{x} vs {y}");
    }
}

#[test]
fn hypothesis_checks_accept_a_well_posed_problem_and_reject_bad_lambda() {
    let g = Grid::new(1, 32, 6.0).unwrap();
    let cubic = nonlinearity("-u^3").with_constant_modulus(4.0);
    let mut spec = problem(g, heat(), cubic, nonlinearity("0.2*u"), 0.2);
    let report = check_hypotheses(&spec).unwrap();
    assert!(report.all_passed(), "{report:?}");
    spec.lambda = 0.6;
    let report = check_hypotheses(&spec).unwrap();
    assert!(report.checks.iter().any(|c| c.name == "lambda_range" && !c.passed));
}
