use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{Grid, MAX_DIM};

use super::estimates::{multi_indices, symbol_derivative, FdSteps, MultiIndex, MAX_DERIVATIVE_ORDER};
use super::symbol::{product, Order, SgSymbol, SymbolForm};

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

/// `(-i)^k`.
fn minus_i_pow(k: usize) -> Complex64 {
    match k % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, -1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, 1.0),
    }
}

/// Truncated composition `c = sum_{|alpha| < n} (-i)^{|alpha|} / alpha! d_xi^alpha a d_x^alpha b`,
/// so that `Op(a) Op(b) ~ Op(c)`. Both symbols are frozen at `t`; derivatives
/// use the finite-difference steps of `grid`.
pub fn compose_symbols(a: &SgSymbol, b: &SgSymbol, n_terms: usize, t: f64, grid: &Grid) -> Result<SgSymbol> {
    if n_terms == 0 {
        return Err(Error::InvalidParameter("composition needs at least one term".into()));
    }
    if n_terms > MAX_DERIVATIVE_ORDER {
        return Err(Error::DerivativeOrderLimit {
            requested: n_terms,
            limit: MAX_DERIVATIVE_ORDER,
        });
    }
    a.check_time(t)?;
    b.check_time(t)?;
    // every correction term carries d_x b and d_xi a
    if n_terms == 1 || b.is_x_independent() || a.is_xi_independent() {
        return Ok(product(a, b, t));
    }

    let d = grid.dim();
    let steps = FdSteps::from_grid(grid);
    let mut terms: Vec<(MultiIndex, Complex64)> = Vec::new();
    for k in 0..n_terms {
        for al in multi_indices(d, k) {
            let alpha_fact: f64 = al.iter().map(|&v| factorial(v)).product();
            terms.push((al, minus_i_pow(k) / alpha_fact));
        }
    }
    let zero: MultiIndex = [0; MAX_DIM];
    let (fa, fb) = (a.frozen_at(t), b.frozen_at(t));
    let order = Order::new(a.order().m + b.order().m, a.order().mu + b.order().mu);
    let f = move |_: f64, x: &[f64], xi: &[f64]| {
        let mut px = [0.0; MAX_DIM];
        let mut pxi = [0.0; MAX_DIM];
        px[..x.len()].copy_from_slice(x);
        pxi[..xi.len()].copy_from_slice(xi);
        let ea = |y: &[f64], eta: &[f64]| fa.eval(0.0, &y[..x.len()], &eta[..xi.len()]);
        let eb = |y: &[f64], eta: &[f64]| fb.eval(0.0, &y[..x.len()], &eta[..xi.len()]);
        let mut acc = Complex64::new(0.0, 0.0);
        for (al, c) in &terms {
            let da = symbol_derivative(&ea, &px, &pxi, &zero, al, steps);
            let db = symbol_derivative(&eb, &px, &pxi, al, &zero, steps);
            acc += c * da * db;
        }
        acc
    };
    Ok(SgSymbol::from_form(SymbolForm::General(Arc::new(f)), order)
        .time_independent()
        .with_horizon(a.horizon().min(b.horizon()))
        .with_label(format!("composition of '{}' and '{}' ({n_terms} terms)", a.label(), b.label())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::gaussian;
    use crate::sgcalc::apply_op;

    fn br2(v: &[f64]) -> f64 {
        1.0 + v.iter().map(|c| c * c).sum::<f64>()
    }

    fn laplace() -> SgSymbol {
        SgSymbol::multiplier(Order::new(0.0, 2.0), |_, xi| Complex64::new(br2(xi), 0.0))
    }

    fn weight() -> SgSymbol {
        SgSymbol::pointwise(Order::new(2.0, 0.0), |_, x| Complex64::new(br2(x), 0.0))
    }

    #[test]
    fn one_term_is_the_product() {
        let g = Grid::new(1, 32, 4.0).unwrap();
        let c = compose_symbols(&laplace(), &weight(), 1, 0.0, &g).unwrap();
        for (x, xi) in [(0.0, 0.0), (1.5, -2.0), (-3.0, 7.0)] {
            assert_eq!(c.eval(0.0, &[x], &[xi]), laplace().eval(0.0, &[x], &[xi]) * weight().eval(0.0, &[x], &[xi]));
        }
        assert_eq!(c.order(), Order::new(2.0, 2.0));
    }

    #[test]
    fn x_independent_right_factor_gives_the_exact_product() {
        let g = Grid::new(1, 32, 4.0).unwrap();
        let a = SgSymbol::general(Order::new(1.0, 1.0), |_, x, xi| Complex64::new(x[0] * xi[0], 1.0));
        for n in 1..=4 {
            let c = compose_symbols(&a, &laplace(), n, 0.0, &g).unwrap();
            let v = c.eval(0.0, &[1.25], &[-0.5]);
            assert_eq!(v, a.eval(0.0, &[1.25], &[-0.5]) * Complex64::new(1.25, 0.0));
        }
    }

    #[test]
    fn polynomial_expansion_terminates() {
        // <xi>^2 # <x>^2 = <xi>^2 <x>^2 - 4 i xi x - 2
        let g = Grid::new(1, 64, 8.0).unwrap();
        let c = compose_symbols(&laplace(), &weight(), 3, 0.0, &g).unwrap();
        for (x, xi) in [(0.3, -1.1), (2.0, 4.0), (-5.0, 0.7)] {
            let exact = Complex64::new(br2(&[x]) * br2(&[xi]) - 2.0, -4.0 * x * xi);
            assert!((c.eval(0.0, &[x], &[xi]) - exact).norm() < 1e-9 * exact.norm());
        }
    }

    #[test]
    fn truncation_error_drops_with_more_terms() {
        let g = Grid::new(1, 128, 12.0).unwrap();
        let u = gaussian(g, 1.0, 2.0, 1.0).unwrap();
        let nested = apply_op(&laplace(), 0.0, &apply_op(&weight(), 0.0, &u).unwrap()).unwrap();
        let errs: Vec<f64> = (1..=3)
            .map(|n| {
                let c = compose_symbols(&laplace(), &weight(), n, 0.0, &g).unwrap();
                apply_op(&c, 0.0, &u).unwrap().sub(&nested).unwrap().l2_norm()
            })
            .collect();
        assert!(errs[0] >= 2.0 * errs[1], "{errs:?}");
        assert!(errs[1] >= 2.0 * errs[2], "{errs:?}");
    }

    #[test]
    fn limits_are_enforced() {
        let g = Grid::new(1, 8, 1.0).unwrap();
        assert!(matches!(
            compose_symbols(&laplace(), &weight(), 5, 0.0, &g),
            Err(Error::DerivativeOrderLimit { requested: 5, limit: 4 })
        ));
        assert!(compose_symbols(&laplace(), &weight(), 0, 0.0, &g).is_err());
    }
}
