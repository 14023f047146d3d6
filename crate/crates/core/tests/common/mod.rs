#![allow(dead_code)]

use sgspde::expr::Expr;
use sgspde::numeric::bracket_pow;
use sgspde::{Complex64, LipParams, NemytskiiFn, Order, SgSymbol};

pub fn re(v: f64) -> Complex64 {
    Complex64::new(v, 0.0)
}

/// `<xi>^2`, order (0, 2).
pub fn heat() -> SgSymbol {
    SgSymbol::multiplier(Order::new(0.0, 2.0), |_, xi| re(bracket_pow(xi, 2.0)))
        .time_independent()
        .with_hypo_order(Order::new(0.0, 2.0))
        .unwrap()
        .with_label("<xi>^2")
}

/// `<x>^2 <xi>^2`, order (2, 2).
pub fn sg_heat() -> SgSymbol {
    SgSymbol::separable(Order::new(2.0, 2.0), |_, x| re(bracket_pow(x, 2.0)), |_, xi| re(bracket_pow(xi, 2.0)))
        .time_independent()
        .with_hypo_order(Order::new(2.0, 2.0))
        .unwrap()
        .with_label("<x>^2 <xi>^2")
}

pub fn nonlinearity(src: &str) -> NemytskiiFn {
    NemytskiiFn::from_expr(&Expr::parse(src).unwrap(), LipParams::default()).unwrap()
}
