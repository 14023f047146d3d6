//! Fundamental solution `E(t, s)` of `d_t + Op(a(t))` built from the principal
//! symbol `e0(t, s, x, xi) = exp(-int_s^t a(tau, x, xi) dtau)`, plus the Duhamel solver.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::numeric::{bracket_pow, gauss_legendre, integrate_gl, phi1};
use crate::sgcalc::{
    apply_op, check_parabolicity, mul_freq, mul_space, sample_freq, sample_space, DenseKernel, SgSymbol, StressGrid,
    SymbolForm,
};

/// Gauss-Legendre nodes for the time integral inside `e0`.
pub const DEFAULT_TIME_NODES: usize = 8;
/// Upper bound on memory held by cached propagator actions.
pub const DEFAULT_CACHE_BUDGET: usize = 512 << 20;
/// Relative slack in the decay constant.
pub const DECAY_TOLERANCE: f64 = 1e-9;

const LAG_QUANTUM: f64 = 1e12;
const DECAY_LAGS: usize = 12;

/// The family `e0(t, s, x, xi)` for a generator `a`.
#[derive(Debug, Clone)]
pub struct PropagatorSymbol {
    base: SgSymbol,
    rule: Vec<(f64, f64)>,
}

impl PropagatorSymbol {
    pub fn new(base: SgSymbol) -> Self {
        Self {
            base,
            rule: gauss_legendre(DEFAULT_TIME_NODES),
        }
    }

    pub fn with_time_nodes(base: SgSymbol, nodes: usize) -> Result<Self> {
        if nodes == 0 {
            return Err(Error::InvalidParameter("time quadrature needs at least one node".into()));
        }
        Ok(Self {
            base,
            rule: gauss_legendre(nodes),
        })
    }

    pub fn base(&self) -> &SgSymbol {
        &self.base
    }

    pub fn time_nodes(&self) -> usize {
        self.rule.len()
    }

    /// `int_s^t a(tau, x, xi) dtau`; exact for time-independent symbols.
    pub fn exponent(&self, t: f64, s: f64, x: &[f64], xi: &[f64]) -> Complex64 {
        if t == s {
            return Complex64::new(0.0, 0.0);
        }
        if !self.base.is_time_dependent() {
            return (t - s) * self.base.eval(s, x, xi);
        }
        integrate_gl(&self.rule, s, t, |tau| self.base.eval(tau, x, xi))
    }

    pub(crate) fn eval_unchecked(&self, t: f64, s: f64, x: &[f64], xi: &[f64]) -> Complex64 {
        if t == s {
            return Complex64::new(1.0, 0.0);
        }
        (-self.exponent(t, s, x, xi)).exp()
    }

    /// Symbol of `int_{s0}^{s1} E(t, tau) dtau` for `s0 <= s1 <= t`.
    pub(crate) fn weight_unchecked(&self, t: f64, s0: f64, s1: f64, x: &[f64], xi: &[f64]) -> Complex64 {
        let width = s1 - s0;
        if width == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        if !self.base.is_time_dependent() {
            let a = self.base.eval(s0, x, xi);
            return width * (-(t - s1) * a).exp() * phi1(width * a);
        }
        integrate_gl(&self.rule, s0, s1, |tau| self.eval_unchecked(t, tau, x, xi))
    }
}

fn check_order(p: &PropagatorSymbol, t: f64, s: f64) -> Result<()> {
    if t < s {
        return Err(Error::TimeOrdering { t, s });
    }
    p.base.check_time(s)?;
    p.base.check_time(t)
}

/// `e0(t, s, x, xi)`, `0 <= s <= t <= T`.
pub fn e0_eval(p: &PropagatorSymbol, t: f64, s: f64, x: &[f64], xi: &[f64]) -> Result<Complex64> {
    check_order(p, t, s)?;
    let v = p.eval_unchecked(t, s, x, xi);
    if !(v.re.is_finite() && v.im.is_finite()) {
        return Err(Error::NonFinite(format!("e0 at t = {t}, s = {s}")));
    }
    Ok(v)
}

/// A sampled operator symbol in the cheapest representation.
#[derive(Debug)]
enum Action {
    Spectral(Vec<Complex64>),
    Spatial(Vec<Complex64>),
    Dense(DenseKernel),
}

impl Action {
    fn apply(&self, u: &Field) -> Result<Field> {
        match self {
            Action::Spectral(q) => mul_freq(u, q),
            Action::Spatial(p) => Ok(mul_space(u, p)),
            Action::Dense(k) => k.apply(u),
        }
    }

    fn bytes(&self) -> usize {
        match self {
            Action::Spectral(v) | Action::Spatial(v) => v.len() * std::mem::size_of::<Complex64>(),
            Action::Dense(k) => k.memory_bytes(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Key {
    Lag(i64),
    Times(i64, i64),
    WeightLag(i64, i64),
    WeightTimes(i64, i64, i64),
}

fn quantize(v: f64) -> i64 {
    (v * LAG_QUANTUM).round() as i64
}

/// The operator family `E0(t, s) = Op(e0(t, s))` on a grid, with a cache of
/// sampled symbols keyed by time lag (time-independent generators) or by `(t, s)`.
#[derive(Debug)]
pub struct Propagator {
    symbol: PropagatorSymbol,
    grid: Grid,
    cache: RwLock<HashMap<Key, Arc<Action>>>,
    cached_bytes: AtomicUsize,
    budget: usize,
}

impl Propagator {
    pub fn new(symbol: PropagatorSymbol, grid: Grid) -> Self {
        Self {
            symbol,
            grid,
            cache: RwLock::new(HashMap::new()),
            cached_bytes: AtomicUsize::new(0),
            budget: DEFAULT_CACHE_BUDGET,
        }
    }

    pub fn for_symbol(base: SgSymbol, grid: Grid) -> Self {
        Self::new(PropagatorSymbol::new(base), grid)
    }

    pub fn with_cache_budget(mut self, bytes: usize) -> Self {
        self.budget = bytes;
        self
    }

    pub fn symbol(&self) -> &PropagatorSymbol {
        &self.symbol
    }

    pub fn base(&self) -> &SgSymbol {
        &self.symbol.base
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// True when `E(t, s)` is an exact Fourier multiplier depending on `t - s` only.
    pub fn is_exact_semigroup(&self) -> bool {
        self.base().is_x_independent() && !self.base().is_time_dependent()
    }

    pub fn cached_bytes(&self) -> usize {
        self.cached_bytes.load(Ordering::Relaxed)
    }

    fn build<F>(&self, f: F) -> Result<Action>
    where
        F: Fn(&[f64], &[f64]) -> Complex64 + Sync,
    {
        let g = &self.grid;
        let zero = [0.0; crate::grid::MAX_DIM];
        Ok(match self.base().form() {
            SymbolForm::Multiplier(_) => Action::Spectral(sample_freq(g, |xi| f(&zero[..g.dim()], xi))?),
            SymbolForm::Pointwise(_) => Action::Spatial(sample_space(g, |x| f(x, &zero[..g.dim()]))?),
            SymbolForm::Separable(..) | SymbolForm::General(_) => Action::Dense(DenseKernel::new(*g, f)?),
        })
    }

    fn cached<F>(&self, key: Key, f: F) -> Result<Arc<Action>>
    where
        F: Fn(&[f64], &[f64]) -> Complex64 + Sync,
    {
        if let Some(a) = self.cache.read().expect("propagator cache poisoned").get(&key) {
            return Ok(a.clone());
        }
        let action = Arc::new(self.build(f)?);
        let bytes = action.bytes();
        if self.cached_bytes.load(Ordering::Relaxed) + bytes <= self.budget {
            let mut map = self.cache.write().expect("propagator cache poisoned");
            if let Some(existing) = map.get(&key) {
                return Ok(existing.clone());
            }
            map.insert(key, action.clone());
            self.cached_bytes.fetch_add(bytes, Ordering::Relaxed);
        }
        Ok(action)
    }

    fn e0_action(&self, t: f64, s: f64) -> Result<Arc<Action>> {
        let key = if self.base().is_time_dependent() {
            Key::Times(quantize(t), quantize(s))
        } else {
            Key::Lag(quantize(t - s))
        };
        let p = &self.symbol;
        self.cached(key, |x, xi| p.eval_unchecked(t, s, x, xi))
    }

    fn weight_action(&self, t: f64, s0: f64, s1: f64) -> Result<Arc<Action>> {
        let key = if self.base().is_time_dependent() {
            Key::WeightTimes(quantize(t), quantize(s0), quantize(s1))
        } else {
            Key::WeightLag(quantize(t - s1), quantize(s1 - s0))
        };
        let p = &self.symbol;
        self.cached(key, |x, xi| p.weight_unchecked(t, s0, s1, x, xi))
    }

    /// Sampled `e0(t, s, xi)` for exact semigroups (natural frequency order).
    pub(crate) fn spectral_factor(&self, t: f64, s: f64) -> Result<Vec<Complex64>> {
        let p = &self.symbol;
        sample_freq(&self.grid, |xi| p.eval_unchecked(t, s, &[], xi))
    }

    /// Sampled weight symbol for exact semigroups.
    pub(crate) fn spectral_weight(&self, t: f64, s0: f64, s1: f64) -> Result<Vec<Complex64>> {
        let p = &self.symbol;
        sample_freq(&self.grid, |xi| p.weight_unchecked(t, s0, s1, &[], xi))
    }

    pub(crate) fn propagate_unchecked(&self, t: f64, s: f64, u: &Field) -> Result<Field> {
        if t == s {
            return Ok(u.clone());
        }
        self.e0_action(t, s)?.apply(u)
    }

    /// `E0(t, s) u`.
    pub fn propagate(&self, t: f64, s: f64, u: &Field) -> Result<Field> {
        check_order(&self.symbol, t, s)?;
        self.grid.check_same(u.grid())?;
        if !u.is_finite() {
            return Err(Error::NonFinite("propagate input".into()));
        }
        self.propagate_unchecked(t, s, u)
    }

    /// `int_{s0}^{s1} E0(t, tau) u dtau` for `s0 <= s1 <= t`.
    pub fn apply_weight(&self, t: f64, s0: f64, s1: f64, u: &Field) -> Result<Field> {
        check_order(&self.symbol, s1, s0)?;
        check_order(&self.symbol, t, s1)?;
        self.grid.check_same(u.grid())?;
        self.weight_action(t, s0, s1)?.apply(u)
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ResidualReport {
    /// `||d_t E0 u + Op(a(t)) E0 u|| / ||u||`.
    pub residual: f64,
    /// Central-difference step in `t`.
    pub step: f64,
}

/// Measures how far `E0(t, s)` is from solving `(d_t + Op(a(t))) E = 0`.
pub fn residual_check(p: &Propagator, t: f64, s: f64, u: &Field) -> Result<ResidualReport> {
    check_order(&p.symbol, t, s)?;
    if t == s {
        return Err(Error::TimeOrdering { t: s, s: t });
    }
    let step = (1e-4f64).max((t - s) / 100.0);
    if t - 2.0 * step < s {
        return Err(Error::StepTooSmall { step, interval: t - s });
    }
    let norm = u.l2_norm();
    if norm == 0.0 {
        return Ok(ResidualReport { residual: 0.0, step });
    }
    // fourth-order central difference in t
    let mut dt = Field::zeros(p.grid);
    for (off, w) in [(-2.0, 1.0), (-1.0, -8.0), (1.0, 8.0), (2.0, -1.0)] {
        let v = p.propagate_unchecked(t + off * step, s, u)?;
        dt.axpy(Complex64::new(w / (12.0 * step), 0.0), &v)?;
    }
    let here = p.propagate_unchecked(t, s, u)?;
    let gen = apply_op(&p.base().clone().with_horizon(f64::INFINITY), t, &here)?;
    Ok(ResidualReport {
        residual: dt.add(&gen)?.l2_norm() / norm,
        step,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    pub parabolicity_constant: f64,
    pub ell: f64,
    /// `K = ell^ell e^{-ell} / C^ell * (1 + tol)`.
    pub constant: f64,
    pub max_ratio: f64,
    pub argmax_x: Vec<f64>,
    pub argmax_xi: Vec<f64>,
    pub argmax_lag: f64,
    pub samples: usize,
    pub holds: bool,
}

/// Checks `|e0(t, s)| <= K (t - s)^{-ell} <x>^{-l m'} <xi>^{-lambda mu'}` on the stress grid
/// of the propagator grid, `ell = max(l, lambda)`. The diagonal `t = s` is excluded.
pub fn decay_bound_check(p: &Propagator, l: f64, lambda: f64) -> Result<DecayReport> {
    if !(0.0..1.0).contains(&l) || !(0.0..1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!("decay exponents ({l}, {lambda}) must lie in [0, 1)")));
    }
    let base = p.base();
    let hypo = base.hypo_order().ok_or(Error::MissingHypoOrder)?;
    let c = check_parabolicity(base, &p.grid)?.constant;
    let ell = l.max(lambda);
    let k = if ell == 0.0 {
        1.0
    } else {
        ell.powf(ell) * (-ell).exp() / c.powf(ell)
    } * (1.0 + DECAY_TOLERANCE);

    let horizon = if base.horizon().is_finite() { base.horizon() } else { 1.0 };
    let lag_min = horizon * 1e-3;
    let ratio = (horizon / lag_min).powf(1.0 / (DECAY_LAGS - 1) as f64);
    let lags: Vec<f64> = (0..DECAY_LAGS).map(|i| lag_min * ratio.powi(i as i32)).collect();
    let starts: Vec<f64> = if base.is_time_dependent() { vec![0.0, 0.5 * horizon] } else { vec![0.0] };

    let sg = StressGrid::new(&p.grid);
    let d = p.grid.dim();
    let mut report = DecayReport {
        parabolicity_constant: c,
        ell,
        constant: k,
        max_ratio: 0.0,
        argmax_x: vec![0.0; d],
        argmax_xi: vec![0.0; d],
        argmax_lag: lags[0],
        samples: 0,
        holds: true,
    };
    for &s in &starts {
        for &lag in &lags {
            let t = s + lag;
            if t > horizon * (1.0 + 1e-12) {
                continue;
            }
            for x in sg.xs() {
                for xi in sg.xis() {
                    let e = p.symbol.eval_unchecked(t, s, &x[..d], &xi[..d]).norm();
                    let bound = k * lag.powf(-ell) * bracket_pow(&x[..d], -l * hypo.m) * bracket_pow(&xi[..d], -lambda * hypo.mu);
                    let r = e / bound;
                    report.samples += 1;
                    if r > report.max_ratio {
                        report.max_ratio = r;
                        report.argmax_x = x[..d].to_vec();
                        report.argmax_xi = xi[..d].to_vec();
                        report.argmax_lag = lag;
                    }
                }
            }
        }
    }
    report.holds = report.max_ratio <= 1.0;
    Ok(report)
}

/// `u(t) = E(t, s) u0 + int_s^t E(t, tau) f(tau) dtau` at every point of `t_grid`.
///
/// The integral uses composite Gauss-Legendre quadrature on the intervals of
/// `{s} + t_grid`, each split into `refine` pieces.
pub fn duhamel_solve<F>(p: &Propagator, u0: &Field, f: F, s: f64, t_grid: &[f64], refine: usize) -> Result<Vec<Field>>
where
    F: Fn(f64) -> Result<Field>,
{
    if refine == 0 {
        return Err(Error::InvalidParameter("refine must be positive".into()));
    }
    let mut prev = s;
    for &t in t_grid {
        if t < prev {
            return Err(Error::TimeOrdering { t, s: prev });
        }
        check_order(&p.symbol, t, s)?;
        prev = t;
    }
    let rule = gauss_legendre(DEFAULT_TIME_NODES);
    // quadrature nodes and weights over [s, t_last], tagged by the t_grid index that closes them
    let mut nodes: Vec<(usize, f64, f64)> = Vec::new();
    let mut left = s;
    for (n, &right) in t_grid.iter().enumerate() {
        let h = (right - left) / refine as f64;
        for r in 0..refine {
            let a = left + r as f64 * h;
            for &(xq, wq) in &rule {
                nodes.push((n, a + 0.5 * h * (1.0 + xq), 0.5 * h * wq));
            }
        }
        left = right;
    }
    let forcing: Vec<Field> = nodes
        .iter()
        .map(|&(_, tau, _)| {
            let v = f(tau).map_err(|e| e.at_time(tau))?;
            p.grid.check_same(v.grid())?;
            Ok(v)
        })
        .collect::<Result<_>>()?;

    let mut out = Vec::with_capacity(t_grid.len());
    for (n, &t) in t_grid.iter().enumerate() {
        let mut u = p.propagate(t, s, u0)?;
        for (i, &(closing, tau, w)) in nodes.iter().enumerate() {
            if closing > n || w == 0.0 {
                continue;
            }
            let contrib = if p.is_exact_semigroup() {
                p.propagate_unchecked(t, tau, &forcing[i])?
            } else {
                let sym = &p.symbol;
                p.build(|x, xi| sym.eval_unchecked(t, tau, x, xi))?.apply(&forcing[i])?
            };
            u.axpy(Complex64::new(w, 0.0), &contrib)?;
        }
        out.push(u);
    }
    Ok(out)
}
