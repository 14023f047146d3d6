use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Grid, Point, MAX_DIM};
use crate::numeric::bracket_pow;

use super::symbol::SgSymbol;

/// Highest total derivative order estimated by finite differences.
pub const MAX_DERIVATIVE_ORDER: usize = 4;

const STRESS_RADII: usize = 20;
const STRESS_RANDOM_DIRECTIONS: usize = 4;
const PARABOLICITY_TIME_SAMPLES: usize = 5;

/// Multi-index pair `(alpha, beta)` for `d_x^alpha d_xi^beta`.
pub type MultiIndex = [usize; MAX_DIM];

/// Finite-difference steps in `x` and `xi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdSteps {
    pub x: f64,
    pub xi: f64,
}

impl FdSteps {
    /// `h` in space, `pi / X` in frequency.
    pub fn from_grid(g: &Grid) -> Self {
        Self {
            x: g.spacing(),
            xi: g.freq_spacing(),
        }
    }
}

/// Sample points for radial growth statements: the origin plus log-spaced
/// radii along the coordinate axes (both signs) and, for `d > 1`, random directions.
#[derive(Debug, Clone)]
pub struct StressGrid {
    dim: usize,
    xs: Vec<Point>,
    xis: Vec<Point>,
}

impl StressGrid {
    pub fn new(g: &Grid) -> Self {
        Self::with_extent(g.dim(), g.half_width(), g.max_frequency())
    }

    pub fn with_extent(dim: usize, x_max: f64, xi_max: f64) -> Self {
        let dirs = directions(dim);
        Self {
            dim,
            xs: radial_points(dim, x_max, &dirs),
            xis: radial_points(dim, xi_max, &dirs),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn xs(&self) -> &[Point] {
        &self.xs
    }

    pub fn xis(&self) -> &[Point] {
        &self.xis
    }
}

fn directions(dim: usize) -> Vec<Point> {
    let mut dirs = Vec::new();
    for a in 0..dim {
        let mut e = [0.0; MAX_DIM];
        e[a] = 1.0;
        dirs.push(e);
        e[a] = -1.0;
        dirs.push(e);
    }
    if dim > 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x57e55);
        for _ in 0..STRESS_RANDOM_DIRECTIONS {
            let mut v = [0.0; MAX_DIM];
            for c in v.iter_mut().take(dim) {
                *c = rng.gen_range(-1.0..1.0);
            }
            let n = v.iter().map(|c| c * c).sum::<f64>().sqrt().max(1e-12);
            v.iter_mut().for_each(|c| *c /= n);
            dirs.push(v);
            dirs.push(v.map(|c| -c));
        }
    }
    dirs
}

fn radial_points(dim: usize, r_max: f64, dirs: &[Point]) -> Vec<Point> {
    let mut pts = vec![[0.0; MAX_DIM]];
    let r_min = (0.05f64).min(r_max);
    let ratio = (r_max / r_min).powf(1.0 / (STRESS_RADII - 1) as f64);
    for i in 0..STRESS_RADII {
        let r = r_min * ratio.powi(i as i32);
        for d in dirs {
            let mut p = [0.0; MAX_DIM];
            for a in 0..dim {
                p[a] = r * d[a];
            }
            pts.push(p);
        }
    }
    pts
}

const STENCIL: [(f64, f64); 4] = [(-2.0, 1.0), (-1.0, -8.0), (1.0, 8.0), (2.0, -1.0)];

/// `d_x^alpha d_xi^beta f` by nested fourth-order central differences.
pub fn symbol_derivative<F>(f: &F, x: &Point, xi: &Point, alpha: &MultiIndex, beta: &MultiIndex, steps: FdSteps) -> Complex64
where
    F: Fn(&[f64], &[f64]) -> Complex64 + ?Sized,
{
    if let Some(a) = alpha.iter().position(|&k| k > 0) {
        let mut rest = *alpha;
        rest[a] -= 1;
        let mut acc = Complex64::new(0.0, 0.0);
        for (off, w) in STENCIL {
            let mut y = *x;
            y[a] += off * steps.x;
            acc += w * symbol_derivative(f, &y, xi, &rest, beta, steps);
        }
        return acc / (12.0 * steps.x);
    }
    if let Some(b) = beta.iter().position(|&k| k > 0) {
        let mut rest = *beta;
        rest[b] -= 1;
        let mut acc = Complex64::new(0.0, 0.0);
        for (off, w) in STENCIL {
            let mut eta = *xi;
            eta[b] += off * steps.xi;
            acc += w * symbol_derivative(f, x, &eta, alpha, &rest, steps);
        }
        return acc / (12.0 * steps.xi);
    }
    f(x, xi)
}

/// All multi-indices on `dim` axes with total order exactly `k`.
pub fn multi_indices(dim: usize, k: usize) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    let mut cur = [0usize; MAX_DIM];
    fn rec(dim: usize, axis: usize, left: usize, cur: &mut MultiIndex, out: &mut Vec<MultiIndex>) {
        if axis + 1 == dim {
            cur[axis] = left;
            out.push(*cur);
            cur[axis] = 0;
            return;
        }
        for v in 0..=left {
            cur[axis] = v;
            rec(dim, axis + 1, left - v, cur, out);
        }
        cur[axis] = 0;
    }
    rec(dim, 0, k, &mut cur, &mut out);
    out
}

/// Pairs `(alpha, beta)` with `|alpha| + |beta| <= order`.
fn derivative_pairs(dim: usize, order: usize) -> Vec<(MultiIndex, MultiIndex)> {
    let mut pairs = Vec::new();
    for total in 0..=order {
        for na in 0..=total {
            for a in multi_indices(dim, na) {
                for b in multi_indices(dim, total - na) {
                    pairs.push((a, b));
                }
            }
        }
    }
    pairs
}

fn abs_order(i: &MultiIndex) -> usize {
    i.iter().sum()
}

/// Estimates the seminorm `max_{|a+b| <= l} sup <x>^{|a|-m} <xi>^{|b|-mu} |d_x^a d_xi^b a|`.
///
/// The supremum runs over the stress grid of `stress`; the result is a lower
/// bound of the true seminorm.
pub fn seminorm_estimate(a: &SgSymbol, ell: usize, stress: &Grid, t: f64) -> Result<f64> {
    if ell > MAX_DERIVATIVE_ORDER {
        return Err(Error::DerivativeOrderLimit {
            requested: ell,
            limit: MAX_DERIVATIVE_ORDER,
        });
    }
    a.check_time(t)?;
    let sg = StressGrid::new(stress);
    let steps = FdSteps::from_grid(stress);
    let d = stress.dim();
    let pairs = derivative_pairs(d, ell);
    let order = a.order();
    let f = |x: &[f64], xi: &[f64]| a.eval(t, x, xi);
    let best = sg
        .xs()
        .par_iter()
        .map(|x| {
            let mut best = 0.0f64;
            for xi in sg.xis() {
                for (al, be) in &pairs {
                    let v = symbol_derivative(&f, x, xi, al, be, steps).norm();
                    let w = bracket_pow(&x[..d], abs_order(al) as f64 - order.m)
                        * bracket_pow(&xi[..d], abs_order(be) as f64 - order.mu);
                    best = best.max(v * w);
                }
            }
            best
        })
        .reduce(|| 0.0, f64::max);
    if !best.is_finite() {
        return Err(Error::NonFinite("seminorm estimate".into()));
    }
    Ok(best)
}

#[derive(Debug, Clone, Serialize)]
pub struct QuotientBound {
    pub alpha: Vec<usize>,
    pub beta: Vec<usize>,
    /// Smallest `C` with `|d_x^a d_xi^b a / Re a| <= C <x>^{-|a|} <xi>^{-|b|}` on the samples.
    pub constant: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ParabolicityReport {
    /// `min Re a / (<x>^{m'} <xi>^{mu'})` over the samples.
    pub constant: f64,
    pub argmin_x: Vec<f64>,
    pub argmin_xi: Vec<f64>,
    pub argmin_t: f64,
    pub quotient_bounds: Vec<QuotientBound>,
    pub samples: usize,
}

/// Time samples used for parabolicity checks: one for frozen symbols, a few otherwise.
pub(crate) fn time_samples(a: &SgSymbol) -> Vec<f64> {
    let horizon = if a.horizon().is_finite() { a.horizon() } else { 1.0 };
    if !a.is_time_dependent() {
        return vec![0.0];
    }
    (0..PARABOLICITY_TIME_SAMPLES)
        .map(|i| horizon * i as f64 / (PARABOLICITY_TIME_SAMPLES - 1) as f64)
        .collect()
}

/// Computes the empirical parabolicity constant and derivative-quotient bounds.
pub fn check_parabolicity(a: &SgSymbol, stress: &Grid) -> Result<ParabolicityReport> {
    let hypo = a.hypo_order().ok_or(Error::MissingHypoOrder)?;
    let sg = StressGrid::new(stress);
    let d = stress.dim();
    let ts = time_samples(a);

    let mut constant = f64::INFINITY;
    let mut arg = ([0.0; MAX_DIM], [0.0; MAX_DIM], 0.0);
    let mut samples = 0;
    for &t in &ts {
        for x in sg.xs() {
            for xi in sg.xis() {
                let re = a.eval(t, &x[..d], &xi[..d]).re;
                let c = re / (bracket_pow(&x[..d], hypo.m) * bracket_pow(&xi[..d], hypo.mu));
                samples += 1;
                if c.is_nan() || c < constant {
                    constant = c;
                    arg = (*x, *xi, t);
                }
            }
        }
    }
    if constant.is_nan() || constant <= 0.0 {
        return Err(Error::NotParabolic {
            constant,
            x: arg.0[..d].to_vec(),
            xi: arg.1[..d].to_vec(),
            t: arg.2,
        });
    }

    let steps = FdSteps::from_grid(stress);
    let pairs: Vec<_> = derivative_pairs(d, 2).into_iter().filter(|(al, be)| abs_order(al) + abs_order(be) > 0).collect();
    let mut quotient_bounds = Vec::with_capacity(pairs.len());
    for (al, be) in &pairs {
        let mut worst = 0.0f64;
        for &t in &ts {
            let f = |x: &[f64], xi: &[f64]| a.eval(t, x, xi);
            let w = sg
                .xs()
                .par_iter()
                .map(|x| {
                    let mut w = 0.0f64;
                    for xi in sg.xis() {
                        let re = a.eval(t, &x[..d], &xi[..d]).re;
                        let der = symbol_derivative(&f, x, xi, al, be, steps).norm();
                        let q = der / re * bracket_pow(&x[..d], abs_order(al) as f64) * bracket_pow(&xi[..d], abs_order(be) as f64);
                        w = w.max(q);
                    }
                    w
                })
                .reduce(|| 0.0, f64::max);
            worst = worst.max(w);
        }
        quotient_bounds.push(QuotientBound {
            alpha: al[..d].to_vec(),
            beta: be[..d].to_vec(),
            constant: worst,
        });
    }

    Ok(ParabolicityReport {
        constant,
        argmin_x: arg.0[..d].to_vec(),
        argmin_xi: arg.1[..d].to_vec(),
        argmin_t: arg.2,
        quotient_bounds,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sgcalc::Order;

    fn br2(v: &[f64]) -> f64 {
        1.0 + v.iter().map(|c| c * c).sum::<f64>()
    }

    fn sg_heat() -> SgSymbol {
        SgSymbol::separable(
            Order::new(2.0, 2.0),
            |_, x| Complex64::new(br2(x), 0.0),
            |_, xi| Complex64::new(br2(xi), 0.0),
        )
        .time_independent()
    }

    #[test]
    fn multi_index_counts() {
        assert_eq!(multi_indices(1, 3).len(), 1);
        assert_eq!(multi_indices(2, 2).len(), 3);
        assert_eq!(multi_indices(3, 2).len(), 6);
        assert_eq!(derivative_pairs(1, 2).len(), 6);
    }

    #[test]
    fn stencil_is_exact_on_quartics() {
        let f = |x: &[f64], xi: &[f64]| Complex64::new(x[0].powi(4) * xi[0].powi(2), 0.0);
        let steps = FdSteps { x: 0.3, xi: 0.2 };
        let x = [1.5, 0.0, 0.0];
        let xi = [-0.7, 0.0, 0.0];
        let v = symbol_derivative(&f, &x, &xi, &[1, 0, 0], &[1, 0, 0], steps);
        let exact = 4.0 * 1.5f64.powi(3) * 2.0 * -0.7;
        assert!((v.re - exact).abs() < 1e-9);
    }

    #[test]
    fn order_zero_seminorm_of_sg_heat_is_one() {
        let g = Grid::new(1, 128, 20.0).unwrap();
        let v = seminorm_estimate(&sg_heat(), 0, &g, 0.0).unwrap();
        assert!((v - 1.0).abs() < 1e-6);
    }

    #[test]
    fn scaled_multiplier_seminorm_is_the_scale() {
        let g = Grid::new(2, 16, 5.0).unwrap();
        let a = SgSymbol::multiplier(Order::new(0.0, 3.0), |_, xi| Complex64::new(-2.5 * br2(xi).powf(1.5), 0.0));
        let v = seminorm_estimate(&a, 0, &g, 0.0).unwrap();
        assert!((v - 2.5).abs() < 1e-12);
    }

    #[test]
    fn first_order_seminorm_of_sg_heat_tends_to_two() {
        let g = Grid::new(1, 2048, 1000.0).unwrap();
        let v = seminorm_estimate(&sg_heat(), 1, &g, 0.0).unwrap();
        assert!((v - 2.0).abs() < 1e-5, "{v}");
    }

    #[test]
    fn seminorm_order_limit() {
        let g = Grid::new(1, 8, 1.0).unwrap();
        assert!(matches!(
            seminorm_estimate(&sg_heat(), 5, &g, 0.0),
            Err(Error::DerivativeOrderLimit { requested: 5, limit: 4 })
        ));
    }

    #[test]
    fn generalized_sg_heat_has_unit_constant() {
        let g = Grid::new(2, 16, 6.0).unwrap();
        for (m, mu) in [(1.0, 1.0), (0.5, 1.5)] {
            let a = SgSymbol::separable(
                Order::new(2.0 * m, 2.0 * mu),
                move |_, x| Complex64::new(bracket_pow(x, 2.0 * m), 0.0),
                move |_, xi| Complex64::new(bracket_pow(xi, 2.0 * mu), 0.0),
            )
            .time_independent()
            .with_hypo_order(Order::new(2.0 * m, 2.0 * mu))
            .unwrap();
            let rep = check_parabolicity(&a, &g).unwrap();
            assert_eq!(rep.constant, 1.0);
            assert!(rep.quotient_bounds.iter().all(|q| q.constant.is_finite()));
        }
    }

    #[test]
    fn wrong_sign_is_not_parabolic() {
        let g = Grid::new(1, 32, 5.0).unwrap();
        let a = SgSymbol::multiplier(Order::new(0.0, 2.0), |_, xi| Complex64::new(-br2(xi), 0.0))
            .with_hypo_order(Order::new(0.0, 2.0))
            .unwrap();
        match check_parabolicity(&a, &g) {
            Err(Error::NotParabolic { constant, .. }) => assert!(constant < 0.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn imaginary_part_does_not_affect_the_constant() {
        let g = Grid::new(1, 32, 5.0).unwrap();
        let a = SgSymbol::general(Order::new(2.0, 2.0), |_, x, xi| Complex64::new(br2(x) * br2(xi), x[0] * xi[0]))
            .time_independent()
            .with_hypo_order(Order::new(2.0, 2.0))
            .unwrap();
        assert_eq!(check_parabolicity(&a, &g).unwrap().constant, 1.0);
    }

    #[test]
    fn missing_hypo_order_is_reported() {
        let g = Grid::new(1, 8, 1.0).unwrap();
        assert_eq!(check_parabolicity(&sg_heat(), &g).unwrap_err(), Error::MissingHypoOrder);
    }
}
