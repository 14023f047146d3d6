use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Env, Expr};

/// `a(t, x, xi)`.
pub type GeneralFn = dyn Fn(f64, &[f64], &[f64]) -> Complex64 + Send + Sync;
/// A function of `t` and one of `x` or `xi`.
pub type HalfFn = dyn Fn(f64, &[f64]) -> Complex64 + Send + Sync;

/// Order pair `(m, mu)`: growth in `x` and in `xi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Order {
    pub m: f64,
    pub mu: f64,
}

impl Order {
    pub const fn new(m: f64, mu: f64) -> Self {
        Self { m, mu }
    }
}

/// Sobolev-Kato index `(z, zeta)`: spatial weight and smoothness.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SobolevKatoIndex {
    pub z: f64,
    pub zeta: f64,
}

impl SobolevKatoIndex {
    pub const fn new(z: f64, zeta: f64) -> Self {
        Self { z, zeta }
    }

    pub fn shifted(self, dz: f64, dzeta: f64) -> Self {
        Self::new(self.z + dz, self.zeta + dzeta)
    }
}

/// How the symbol depends on `(x, xi)`; selects the application algorithm.
#[derive(Clone)]
pub enum SymbolForm {
    General(Arc<GeneralFn>),
    /// `a(t, xi)`.
    Multiplier(Arc<HalfFn>),
    /// `a(t, x)`.
    Pointwise(Arc<HalfFn>),
    /// `p(t, x) q(t, xi)`.
    Separable(Arc<HalfFn>, Arc<HalfFn>),
}

impl SymbolForm {
    pub fn name(&self) -> &'static str {
        match self {
            SymbolForm::General(_) => "general",
            SymbolForm::Multiplier(_) => "multiplier",
            SymbolForm::Pointwise(_) => "pointwise",
            SymbolForm::Separable(..) => "separable",
        }
    }
}

/// A symbol `a(t, x, xi)` on `[0, T]` with declared SG order.
#[derive(Clone)]
pub struct SgSymbol {
    form: SymbolForm,
    order: Order,
    hypo_order: Option<Order>,
    horizon: f64,
    time_dependent: bool,
    label: String,
}

impl fmt::Debug for SgSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SgSymbol")
            .field("label", &self.label)
            .field("form", &self.form.name())
            .field("order", &self.order)
            .field("hypo_order", &self.hypo_order)
            .field("horizon", &self.horizon)
            .field("time_dependent", &self.time_dependent)
            .finish()
    }
}

impl SgSymbol {
    fn with_form(form: SymbolForm, order: Order) -> Self {
        Self {
            form,
            order,
            hypo_order: None,
            horizon: f64::INFINITY,
            time_dependent: true,
            label: String::new(),
        }
    }

    pub fn general<F>(order: Order, f: F) -> Self
    where
        F: Fn(f64, &[f64], &[f64]) -> Complex64 + Send + Sync + 'static,
    {
        Self::with_form(SymbolForm::General(Arc::new(f)), order)
    }

    pub fn multiplier<F>(order: Order, f: F) -> Self
    where
        F: Fn(f64, &[f64]) -> Complex64 + Send + Sync + 'static,
    {
        Self::with_form(SymbolForm::Multiplier(Arc::new(f)), order)
    }

    pub fn pointwise<F>(order: Order, f: F) -> Self
    where
        F: Fn(f64, &[f64]) -> Complex64 + Send + Sync + 'static,
    {
        Self::with_form(SymbolForm::Pointwise(Arc::new(f)), order)
    }

    pub fn separable<P, Q>(order: Order, p: P, q: Q) -> Self
    where
        P: Fn(f64, &[f64]) -> Complex64 + Send + Sync + 'static,
        Q: Fn(f64, &[f64]) -> Complex64 + Send + Sync + 'static,
    {
        Self::with_form(SymbolForm::Separable(Arc::new(p), Arc::new(q)), order)
    }

    pub(crate) fn from_form(form: SymbolForm, order: Order) -> Self {
        Self::with_form(form, order)
    }

    /// Builds a symbol from an expression, picking the cheapest form it admits.
    pub fn from_expr(expr: &Expr, order: Order) -> Result<Self> {
        let dep = expr.dependence();
        if dep.u {
            return Err(Error::InvalidParameter(format!(
                "symbol '{expr}' must not depend on the state u"
            )));
        }
        let zero = Complex64::new(0.0, 0.0);
        let mut symbol = if !dep.x {
            let e = expr.clone();
            Self::multiplier(order, move |t, xi| e.eval(&Env::new(t, &[], xi).with_u(zero)))
        } else if !dep.xi {
            let e = expr.clone();
            Self::pointwise(order, move |t, x| e.eval(&Env::new(t, x, &[])))
        } else if let Some((p, q)) = expr.split_separable() {
            Self::separable(
                order,
                move |t, x| p.eval(&Env::new(t, x, &[])),
                move |t, xi| q.eval(&Env::new(t, &[], xi)),
            )
        } else {
            let e = expr.clone();
            Self::general(order, move |t, x, xi| e.eval(&Env::new(t, x, xi)))
        };
        symbol.time_dependent = dep.t;
        symbol.label = expr.source().to_string();
        Ok(symbol)
    }

    /// Declares the hypoellipticity orders `(m', mu')`, `0 <= m' <= m`, `0 <= mu' <= mu`.
    pub fn with_hypo_order(mut self, hypo: Order) -> Result<Self> {
        let ok = |v: f64, cap: f64| v.is_finite() && v >= 0.0 && v <= cap + 1e-12;
        if !ok(hypo.m, self.order.m) || !ok(hypo.mu, self.order.mu) || (hypo.m == 0.0 && hypo.mu == 0.0) {
            return Err(Error::InvalidParameter(format!(
                "hypoellipticity order {hypo:?} incompatible with order {:?}",
                self.order
            )));
        }
        self.hypo_order = Some(hypo);
        Ok(self)
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    /// Marks the symbol as constant in `t`, enabling exact exponentials and lag caching.
    pub fn time_independent(mut self) -> Self {
        self.time_dependent = false;
        self
    }

    pub fn with_time_dependence(mut self, dependent: bool) -> Self {
        self.time_dependent = dependent;
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn form(&self) -> &SymbolForm {
        &self.form
    }

    pub fn order(&self) -> Order {
        self.order
    }

    pub fn hypo_order(&self) -> Option<Order> {
        self.hypo_order
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn is_time_dependent(&self) -> bool {
        self.time_dependent
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_x_independent(&self) -> bool {
        matches!(self.form, SymbolForm::Multiplier(_))
    }

    pub fn is_xi_independent(&self) -> bool {
        matches!(self.form, SymbolForm::Pointwise(_))
    }

    #[inline]
    pub fn eval(&self, t: f64, x: &[f64], xi: &[f64]) -> Complex64 {
        match &self.form {
            SymbolForm::General(f) => f(t, x, xi),
            SymbolForm::Multiplier(q) => q(t, xi),
            SymbolForm::Pointwise(p) => p(t, x),
            SymbolForm::Separable(p, q) => p(t, x) * q(t, xi),
        }
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= -1e-12 && t <= self.horizon * (1.0 + 1e-12) + 1e-12) {
            return Err(Error::TimeOutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        Ok(())
    }

    /// The symbol frozen at time `t`.
    pub fn frozen_at(&self, t: f64) -> SgSymbol {
        let form = match &self.form {
            SymbolForm::General(f) => {
                let f = f.clone();
                SymbolForm::General(Arc::new(move |_, x: &[f64], xi: &[f64]| f(t, x, xi)))
            }
            SymbolForm::Multiplier(q) => {
                let q = q.clone();
                SymbolForm::Multiplier(Arc::new(move |_, xi: &[f64]| q(t, xi)))
            }
            SymbolForm::Pointwise(p) => {
                let p = p.clone();
                SymbolForm::Pointwise(Arc::new(move |_, x: &[f64]| p(t, x)))
            }
            SymbolForm::Separable(p, q) => {
                let (p, q) = (p.clone(), q.clone());
                SymbolForm::Separable(
                    Arc::new(move |_, x: &[f64]| p(t, x)),
                    Arc::new(move |_, xi: &[f64]| q(t, xi)),
                )
            }
        };
        SgSymbol {
            form,
            order: self.order,
            hypo_order: self.hypo_order,
            horizon: self.horizon,
            time_dependent: false,
            label: format!("{} at t = {t}", self.label),
        }
    }
}

/// Pointwise product of two symbols frozen at `t`, keeping the cheapest form.
pub(crate) fn product(a: &SgSymbol, b: &SgSymbol, t: f64) -> SgSymbol {
    let a = a.frozen_at(t);
    let b = b.frozen_at(t);
    let order = Order::new(a.order.m + b.order.m, a.order.mu + b.order.mu);
    let form = match (&a.form, &b.form) {
        (SymbolForm::Multiplier(p), SymbolForm::Multiplier(q)) => {
            let (p, q) = (p.clone(), q.clone());
            SymbolForm::Multiplier(Arc::new(move |t, xi: &[f64]| p(t, xi) * q(t, xi)))
        }
        (SymbolForm::Pointwise(p), SymbolForm::Pointwise(q)) => {
            let (p, q) = (p.clone(), q.clone());
            SymbolForm::Pointwise(Arc::new(move |t, x: &[f64]| p(t, x) * q(t, x)))
        }
        (SymbolForm::Pointwise(p), SymbolForm::Multiplier(q)) | (SymbolForm::Multiplier(q), SymbolForm::Pointwise(p)) => {
            SymbolForm::Separable(p.clone(), q.clone())
        }
        (SymbolForm::Separable(p, q), SymbolForm::Multiplier(r))
        | (SymbolForm::Multiplier(r), SymbolForm::Separable(p, q)) => {
            let (q, r) = (q.clone(), r.clone());
            SymbolForm::Separable(p.clone(), Arc::new(move |t, xi: &[f64]| q(t, xi) * r(t, xi)))
        }
        (SymbolForm::Separable(p, q), SymbolForm::Pointwise(r))
        | (SymbolForm::Pointwise(r), SymbolForm::Separable(p, q)) => {
            let (p, r) = (p.clone(), r.clone());
            SymbolForm::Separable(Arc::new(move |t, x: &[f64]| p(t, x) * r(t, x)), q.clone())
        }
        _ => {
            let (a, b) = (a.clone(), b.clone());
            SymbolForm::General(Arc::new(move |t, x: &[f64], xi: &[f64]| a.eval(t, x, xi) * b.eval(t, x, xi)))
        }
    };
    SgSymbol {
        form,
        order,
        hypo_order: None,
        horizon: a.horizon.min(b.horizon),
        time_dependent: false,
        label: format!("({}) * ({})", a.label, b.label),
    }
}
