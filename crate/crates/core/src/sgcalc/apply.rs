use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{forward_dft, inverse_dft, Field, Grid};
use crate::numeric::bracket_pow;

use super::symbol::{SgSymbol, SobolevKatoIndex, SymbolForm};

/// `||<x>^z <D>^zeta u||_{L^2}`: smoothing first, spatial weight second.
pub fn sk_norm(u: &Field, idx: SobolevKatoIndex) -> Result<f64> {
    if !u.is_finite() {
        return Err(Error::NonFinite("sk_norm input".into()));
    }
    let g = *u.grid();
    let smoothed = if idx.zeta == 0.0 {
        u.clone()
    } else {
        mul_freq(u, &sample_freq(&g, |xi| Complex64::new(bracket_pow(xi, idx.zeta), 0.0))?)?
    };
    let norm = if idx.z == 0.0 {
        smoothed.l2_norm()
    } else {
        let mut acc = 0.0;
        for (j, v) in smoothed.values().iter().enumerate() {
            let x = g.point(j);
            acc += (v * bracket_pow(&x[..g.dim()], idx.z)).norm_sqr();
        }
        (acc * g.cell_volume()).sqrt()
    };
    if !norm.is_finite() {
        return Err(Error::Overflow(format!("Sobolev-Kato norm with index ({}, {})", idx.z, idx.zeta)));
    }
    Ok(norm)
}

/// Samples `f(x)` on the space grid.
pub(crate) fn sample_space<F: Fn(&[f64]) -> Complex64>(g: &Grid, f: F) -> Result<Vec<Complex64>> {
    let v: Vec<Complex64> = (0..g.len())
        .map(|j| {
            let x = g.point(j);
            f(&x[..g.dim()])
        })
        .collect();
    check_finite(&v, "symbol values")?;
    Ok(v)
}

/// Samples `f(xi)` on the frequency grid, natural order.
pub(crate) fn sample_freq<F: Fn(&[f64]) -> Complex64>(g: &Grid, f: F) -> Result<Vec<Complex64>> {
    let v: Vec<Complex64> = (0..g.len())
        .map(|k| {
            let xi = g.wavevector(k);
            f(&xi[..g.dim()])
        })
        .collect();
    check_finite(&v, "symbol values")?;
    Ok(v)
}

pub(crate) fn check_finite(v: &[Complex64], what: &str) -> Result<()> {
    if v.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

/// Multiplies `u` pointwise by sampled values.
pub(crate) fn mul_space(u: &Field, p: &[Complex64]) -> Field {
    Field::from_parts_unchecked(*u.grid(), u.values().iter().zip(p).map(|(a, b)| a * b).collect())
}

/// Applies a sampled Fourier multiplier.
pub(crate) fn mul_freq(u: &Field, q: &[Complex64]) -> Result<Field> {
    let spec = forward_dft(u)?;
    let out: Vec<Complex64> = spec.values().iter().zip(q).map(|(a, b)| a * b).collect();
    inverse_dft(&Field::from_parts_unchecked(*u.grid(), out))
}

/// Dense Kohn-Nirenberg matrix acting on spectra:
/// `(Op u)(x_j) = sum_k B[j, k] u^(xi_k)`, with `B[j, k] = a(x_j, xi_k) e^{i x_j xi_k} (2X)^{-d}`.
#[derive(Debug, Clone)]
pub struct DenseKernel {
    grid: Grid,
    entries: Vec<Complex64>,
}

impl DenseKernel {
    pub fn new<F>(grid: Grid, symbol: F) -> Result<Self>
    where
        F: Fn(&[f64], &[f64]) -> Complex64 + Sync,
    {
        let n = grid.points_per_axis();
        let len = grid.len();
        let d = grid.dim();
        let roots: Vec<Complex64> = (0..n)
            .map(|r| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * r as f64 / n as f64))
            .collect();
        let scale = (2.0 * grid.half_width()).powi(-(d as i32));
        let wave: Vec<_> = grid.wavevectors();
        let kidx: Vec<_> = (0..len).map(|k| grid.unflatten(k)).collect();
        let mut entries = vec![Complex64::new(0.0, 0.0); len * len];
        entries.par_chunks_mut(len).enumerate().for_each(|(j, row)| {
            let x = grid.point(j);
            let jidx = grid.unflatten(j);
            for (k, slot) in row.iter_mut().enumerate() {
                let mut phase = Complex64::new(scale, 0.0);
                let mut parity = 0;
                for a in 0..d {
                    phase *= roots[(jidx[a] * kidx[k][a]) % n];
                    parity += kidx[k][a];
                }
                if parity % 2 == 1 {
                    phase = -phase;
                }
                *slot = symbol(&x[..d], &wave[k][..d]) * phase;
            }
        });
        check_finite(&entries, "symbol values")?;
        Ok(Self { grid, entries })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Applies the operator to a spectrum (natural order).
    pub fn apply_spectrum(&self, spec: &[Complex64]) -> Vec<Complex64> {
        let len = self.grid.len();
        self.entries
            .par_chunks(len)
            .map(|row| row.iter().zip(spec).map(|(b, s)| b * s).sum())
            .collect()
    }

    pub fn apply(&self, u: &Field) -> Result<Field> {
        self.grid.check_same(u.grid())?;
        let spec = forward_dft(u)?;
        Ok(Field::from_parts_unchecked(self.grid, self.apply_spectrum(spec.values())))
    }

    /// Bytes held by the matrix.
    pub fn memory_bytes(&self) -> usize {
        self.entries.len() * std::mem::size_of::<Complex64>()
    }
}

/// `Op(a(t)) u` by Kohn-Nirenberg quadrature on the grid.
///
/// Multiplier, pointwise and separable symbols use FFTs only; general symbols
/// build a dense kernel, costing `O(N^{2d})`.
pub fn apply_op(a: &SgSymbol, t: f64, u: &Field) -> Result<Field> {
    a.check_time(t)?;
    if !u.is_finite() {
        return Err(Error::NonFinite("apply_op input".into()));
    }
    let g = *u.grid();
    match a.form() {
        SymbolForm::Multiplier(q) => mul_freq(u, &sample_freq(&g, |xi| q(t, xi))?),
        SymbolForm::Pointwise(p) => Ok(mul_space(u, &sample_space(&g, |x| p(t, x))?)),
        SymbolForm::Separable(p, q) => {
            let v = mul_freq(u, &sample_freq(&g, |xi| q(t, xi))?)?;
            Ok(mul_space(&v, &sample_space(&g, |x| p(t, x))?))
        }
        SymbolForm::General(f) => DenseKernel::new(g, |x, xi| f(t, x, xi))?.apply(u),
    }
}
