//! Nemytskii operators `w -> g(t, ., w(.))` with empirical `Lip(z, zeta, r, rho)` certificates.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Env, Expr};
use crate::fields::{smooth_random_field, SmoothFieldParams};
use crate::grid::{Field, Grid};
use crate::sgcalc::{sk_norm, SobolevKatoIndex};

pub type PointwiseFn = dyn Fn(f64, &[f64], Complex64) -> Complex64 + Send + Sync;
pub type Modulus = dyn Fn(f64) -> f64 + Send + Sync;

/// The indices `(z, zeta, r, rho)` of the class `Lip(z, zeta, r, rho)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LipParams {
    pub z: f64,
    pub zeta: f64,
    pub r: f64,
    pub rho: f64,
}

impl LipParams {
    pub fn new(z: f64, zeta: f64, r: f64, rho: f64) -> Result<Self> {
        if !(r >= 0.0 && rho >= 0.0) || ![z, zeta, r, rho].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "Lip parameters need finite values and r, rho >= 0, got ({z}, {zeta}, {r}, {rho})"
            )));
        }
        Ok(Self { z, zeta, r, rho })
    }

    /// Target space index `(z, zeta)`.
    pub fn target(&self) -> SobolevKatoIndex {
        SobolevKatoIndex::new(self.z, self.zeta)
    }

    /// Source space index `(z + r, zeta + rho)`.
    pub fn source(&self) -> SobolevKatoIndex {
        SobolevKatoIndex::new(self.z + self.r, self.zeta + self.rho)
    }
}

impl Default for LipParams {
    fn default() -> Self {
        Self {
            z: 0.0,
            zeta: 0.0,
            r: 0.0,
            rho: 0.0,
        }
    }
}

#[derive(Clone, Default)]
pub enum Locality {
    #[default]
    Global,
    /// Ball of the given radius around `center` in the source space.
    Ball { radius: f64, center: Field },
}

impl fmt::Debug for Locality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Locality::Global => write!(f, "Global"),
            Locality::Ball { radius, .. } => write!(f, "Ball {{ radius: {radius} }}"),
        }
    }
}

/// A pointwise nonlinearity `g(t, x, w)` with its declared Lipschitz data.
#[derive(Clone)]
pub struct NemytskiiFn {
    eval: Arc<PointwiseFn>,
    lip: LipParams,
    modulus: Arc<Modulus>,
    locality: Locality,
    depends_on_u: bool,
    is_zero: bool,
    label: String,
}

impl fmt::Debug for NemytskiiFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NemytskiiFn")
            .field("label", &self.label)
            .field("lip", &self.lip)
            .field("locality", &self.locality)
            .field("depends_on_u", &self.depends_on_u)
            .finish()
    }
}

impl NemytskiiFn {
    /// A `u`-dependent function with modulus `C(t) = 1`.
    pub fn new<F>(lip: LipParams, f: F) -> Self
    where
        F: Fn(f64, &[f64], Complex64) -> Complex64 + Send + Sync + 'static,
    {
        Self {
            eval: Arc::new(f),
            lip,
            modulus: Arc::new(|_| 1.0),
            locality: Locality::Global,
            depends_on_u: true,
            is_zero: false,
            label: "<closure>".into(),
        }
    }

    /// `g(t, x)`, not reading the state.
    pub fn forcing<F>(lip: LipParams, f: F) -> Self
    where
        F: Fn(f64, &[f64]) -> Complex64 + Send + Sync + 'static,
    {
        let mut g = Self::new(lip, move |t, x, _| f(t, x));
        g.depends_on_u = false;
        g
    }

    pub fn zero() -> Self {
        let mut g = Self::forcing(LipParams::default(), |_, _| Complex64::new(0.0, 0.0));
        g.is_zero = true;
        g.modulus = Arc::new(|_| 0.0);
        g.label = "0".into();
        g
    }

    pub fn identity() -> Self {
        Self::new(LipParams::default(), |_, _, w| w).with_label("u")
    }

    /// Parses an expression in `t`, `x` and `u`.
    pub fn from_expr(expr: &Expr, lip: LipParams) -> Result<Self> {
        let dep = expr.dependence();
        if dep.xi {
            return Err(Error::InvalidParameter(format!(
                "nonlinearity '{expr}' must not depend on xi"
            )));
        }
        let e = expr.clone();
        let mut g = Self::new(lip, move |t, x, w| e.eval(&Env::new(t, x, &[]).with_u(w)));
        g.depends_on_u = dep.u;
        g.is_zero = matches!(expr.root(), crate::expr::Node::Num(v) if *v == Complex64::new(0.0, 0.0));
        g.label = expr.source().to_string();
        Ok(g)
    }

    pub fn with_modulus<F>(mut self, c: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        self.modulus = Arc::new(c);
        self
    }

    pub fn with_constant_modulus(self, c: f64) -> Self {
        self.with_modulus(move |_| c)
    }

    pub fn with_locality(mut self, locality: Locality) -> Self {
        self.locality = locality;
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn lip_params(&self) -> LipParams {
        self.lip
    }

    pub fn modulus(&self, t: f64) -> f64 {
        (self.modulus)(t)
    }

    pub fn locality(&self) -> &Locality {
        &self.locality
    }

    pub fn depends_on_u(&self) -> bool {
        self.depends_on_u
    }

    /// True only for [`NemytskiiFn::zero`] and the literal expression `0`.
    pub fn is_zero(&self) -> bool {
        self.is_zero
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, t: f64, x: &[f64], w: Complex64) -> Complex64 {
        (self.eval)(t, x, w)
    }

    /// Source-space distance to the locality centre, if local.
    pub fn locality_distance(&self, w: &Field) -> Result<Option<(f64, f64)>> {
        match &self.locality {
            Locality::Global => Ok(None),
            Locality::Ball { radius, center } => {
                let n = sk_norm(&w.sub(center)?, self.lip.source())?;
                Ok(Some((n, *radius)))
            }
        }
    }
}

/// `x -> g(t, x, w(x))` on the grid, after checking the locality ball.
pub fn apply_nemytskii(g: &NemytskiiFn, t: f64, w: &Field) -> Result<Field> {
    if let Some((norm, radius)) = g.locality_distance(w)? {
        if norm > radius {
            return Err(Error::OutOfNeighborhood { norm, radius });
        }
    }
    apply_unchecked(g, t, w)
}

pub(crate) fn apply_unchecked(g: &NemytskiiFn, t: f64, w: &Field) -> Result<Field> {
    let grid = w.grid();
    let d = grid.dim();
    let values: Vec<Complex64> = w
        .values()
        .iter()
        .enumerate()
        .map(|(j, &v)| {
            let x = grid.point(j);
            g.eval(t, &x[..d], v)
        })
        .collect();
    Field::new(*grid, values).map_err(|_| Error::NonFinite(format!("nonlinearity '{}' at t = {t}", g.label)))
}

#[derive(Debug, Clone, Serialize)]
pub struct LipTimeReport {
    pub t: f64,
    pub declared: f64,
    /// `sup ||g(v)|| / (1 + ||v||)` over the samples.
    pub c_hat_bound: f64,
    /// `sup ||g(v1) - g(v2)|| / ||v1 - v2||` over the pairs.
    pub c_hat_lipschitz: f64,
    /// `sup ||g(v1 - v2) - g(0)|| / ||v1 - v2||`: the homogeneous part on the same differences.
    pub c_hat_homogeneous: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LipReport {
    pub params: LipParams,
    pub per_time: Vec<LipTimeReport>,
    /// Smallest `C(t) (1 + ||v||) - ||g(v)||`.
    pub worst_bound_margin: f64,
    /// Smallest `C(t) ||v1 - v2|| - ||g(v1) - g(v2)||`.
    pub worst_lipschitz_margin: f64,
    /// Largest empirical constant over all times.
    pub c_hat: f64,
    pub samples_used: usize,
    /// Pairs skipped because a member lies outside the locality ball.
    pub samples_outside: usize,
    /// Whether real inputs produced real outputs on every sample.
    pub real_preserving: bool,
    pub holds: bool,
}

/// Checks both inequalities of the `Lip` class on the given pairs and times.
pub fn verify_lip(g: &NemytskiiFn, samples: &[(Field, Field)], t_samples: &[f64]) -> Result<LipReport> {
    let src = g.lip.source();
    let tgt = g.lip.target();
    let mut inside = Vec::new();
    let mut outside = 0;
    for (a, b) in samples {
        let da = g.locality_distance(a)?;
        let db = g.locality_distance(b)?;
        if da.is_some_and(|(n, r)| n > r) || db.is_some_and(|(n, r)| n > r) {
            outside += 1;
        } else {
            inside.push((a, b));
        }
    }
    struct Row {
        bound: f64,
        bound_margin: f64,
        lip: f64,
        lip_margin: f64,
        homog: f64,
        real_ok: bool,
    }
    let mut per_time = Vec::with_capacity(t_samples.len());
    let mut worst_bound = f64::INFINITY;
    let mut worst_lip = f64::INFINITY;
    let mut real_preserving = true;
    for &t in t_samples {
        let c = g.modulus(t);
        let rows: Vec<Row> = inside
            .par_iter()
            .map(|(a, b)| -> Result<Row> {
                let ga = apply_unchecked(g, t, a)?;
                let gb = apply_unchecked(g, t, b)?;
                let (na, nb) = (sk_norm(a, src)?, sk_norm(b, src)?);
                let (ga_n, gb_n) = (sk_norm(&ga, tgt)?, sk_norm(&gb, tgt)?);
                let bound = (ga_n / (1.0 + na)).max(gb_n / (1.0 + nb));
                let bound_margin = (c * (1.0 + na) - ga_n).min(c * (1.0 + nb) - gb_n);
                let diff = a.sub(b)?;
                let dn = sk_norm(&diff, src)?;
                let gd = sk_norm(&ga.sub(&gb)?, tgt)?;
                let g0 = apply_unchecked(g, t, &Field::zeros(*a.grid()))?;
                let hom = sk_norm(&apply_unchecked(g, t, &diff)?.sub(&g0)?, tgt)?;
                let (lip, homog) = if dn > 0.0 { (gd / dn, hom / dn) } else { (0.0, 0.0) };
                let is_real = |f: &Field| f.max_imag() == 0.0;
                let real_ok = !(is_real(a) && is_real(b)) || (is_real(&ga) && is_real(&gb));
                Ok(Row {
                    bound,
                    bound_margin,
                    lip,
                    lip_margin: c * dn - gd,
                    homog,
                    real_ok,
                })
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.at_time(t))?;
        let mut rep = LipTimeReport {
            t,
            declared: c,
            c_hat_bound: 0.0,
            c_hat_lipschitz: 0.0,
            c_hat_homogeneous: 0.0,
        };
        for r in rows {
            rep.c_hat_bound = rep.c_hat_bound.max(r.bound);
            rep.c_hat_lipschitz = rep.c_hat_lipschitz.max(r.lip);
            rep.c_hat_homogeneous = rep.c_hat_homogeneous.max(r.homog);
            worst_bound = worst_bound.min(r.bound_margin);
            worst_lip = worst_lip.min(r.lip_margin);
            real_preserving &= r.real_ok;
        }
        per_time.push(rep);
    }
    let c_hat = per_time
        .iter()
        .map(|r| r.c_hat_bound.max(r.c_hat_lipschitz))
        .fold(0.0, f64::max);
    let holds = worst_bound >= 0.0 && worst_lip >= 0.0;
    Ok(LipReport {
        params: g.lip,
        per_time,
        worst_bound_margin: worst_bound,
        worst_lipschitz_margin: worst_lip,
        c_hat,
        samples_used: inside.len(),
        samples_outside: outside,
        real_preserving,
        holds,
    })
}

/// Pairs of smooth random real fields, each scaled to a source-space norm drawn
/// uniformly from `(0, radius]` around `center` (zero if `None`).
pub fn lip_battery(
    grid: Grid,
    index: SobolevKatoIndex,
    radius: f64,
    count: usize,
    seed: u64,
    center: Option<&Field>,
) -> Result<Vec<(Field, Field)>> {
    (0..count)
        .map(|i| {
            let draw = |k: u64| -> Result<Field> {
                let s = seed.wrapping_add(2 * i as u64 + k).wrapping_mul(0x9e37_79b9_7f4a_7c15);
                let params = SmoothFieldParams {
                    bandwidth: 1.0 + (i % 3) as f64,
                    ..Default::default()
                };
                let f = smooth_random_field(grid, s, params)?;
                let n = sk_norm(&f, index)?;
                let frac = ((s >> 11) as f64 / (1u64 << 53) as f64).max(0.05);
                let f = f.scale_real(radius * frac / n);
                match center {
                    Some(c) => f.add(c),
                    None => Ok(f),
                }
            };
            Ok((draw(0)?, draw(1)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::gaussian;
    use crate::numeric::bracket;

    fn grid() -> Grid {
        Grid::new(1, 64, 8.0).unwrap()
    }

    #[test]
    fn identity_and_square_are_pointwise() {
        let g = grid();
        let w = gaussian(g, 1.3, 0.5, 1.0).unwrap();
        assert_eq!(apply_nemytskii(&NemytskiiFn::identity(), 0.0, &w).unwrap(), w);
        let sq = NemytskiiFn::from_expr(&Expr::parse("u^2").unwrap(), LipParams::default()).unwrap();
        let out = apply_nemytskii(&sq, 0.0, &w).unwrap();
        for (o, v) in out.values().iter().zip(w.values()) {
            assert!((o - v * v).norm() <= 1e-13 * v.norm_sqr().max(1e-300));
        }
    }

    #[test]
    fn weighted_state_matches_pointwise_evaluation() {
        let g = grid();
        let w = gaussian(g, 1.0, 0.0, 2.0).unwrap();
        let f = NemytskiiFn::from_expr(&Expr::parse("<x>^(-1) * u").unwrap(), LipParams::default()).unwrap();
        let out = apply_nemytskii(&f, 0.3, &w).unwrap();
        for j in 0..g.len() {
            let x = g.coordinate(j);
            assert_eq!(out.values()[j], f.eval(0.3, &[x], w.values()[j]));
            assert!((out.values()[j] - w.values()[j] / bracket(&[x])).norm() < 1e-15);
        }
    }

    #[test]
    fn locality_is_enforced() {
        let g = grid();
        let center = gaussian(g, 0.1, 0.0, 1.0).unwrap();
        let f = NemytskiiFn::identity().with_locality(Locality::Ball { radius: 0.5, center });
        assert!(apply_nemytskii(&f, 0.0, &gaussian(g, 0.2, 0.0, 1.0).unwrap()).is_ok());
        assert!(matches!(
            apply_nemytskii(&f, 0.0, &gaussian(g, 5.0, 0.0, 1.0).unwrap()),
            Err(Error::OutOfNeighborhood { .. })
        ));
    }

    #[test]
    fn identity_certificate_is_exact() {
        let g = grid();
        let pairs = lip_battery(g, SobolevKatoIndex::new(0.0, 0.0), 3.0, 12, 7, None).unwrap();
        let r = verify_lip(&NemytskiiFn::identity(), &pairs, &[0.0, 1.0]).unwrap();
        assert!(r.holds);
        assert!(r.worst_lipschitz_margin >= 0.0);
        assert!(r.c_hat <= 1.0 + 1e-14);
        assert!(r.real_preserving);
    }

    #[test]
    fn affine_forcing_certificate() {
        let g = grid();
        let lip = LipParams::new(1.0, 0.0, 0.5, 0.0).unwrap();
        let kappa = |x: &[f64]| (-x[0] * x[0]).exp();
        let idx = lip.source();
        let kn = sk_norm(&Field::from_real_fn(g, kappa).unwrap(), lip.target()).unwrap();
        let c = 2.0;
        let f = NemytskiiFn::new(lip, move |_, x, w| c * (Complex64::new(kappa(x), 0.0) + w))
            .with_constant_modulus(c * (1.0 + kn));
        let pairs = lip_battery(g, idx, 2.0, 20, 3, None).unwrap();
        let r = verify_lip(&f, &pairs, &[0.0]).unwrap();
        assert!(r.holds, "{r:?}");
        let t = &r.per_time[0];
        assert!((t.c_hat_lipschitz - t.c_hat_homogeneous).abs() < 1e-10);
    }

    #[test]
    fn expressions_reading_xi_are_rejected() {
        assert!(NemytskiiFn::from_expr(&Expr::parse("xi * u").unwrap(), LipParams::default()).is_err());
        let f = NemytskiiFn::from_expr(&Expr::parse("exp(-x^2)").unwrap(), LipParams::default()).unwrap();
        assert!(!f.depends_on_u());
        assert!(NemytskiiFn::from_expr(&Expr::parse("0").unwrap(), LipParams::default()).unwrap().is_zero());
    }
}
