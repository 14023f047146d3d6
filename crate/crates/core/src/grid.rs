//! Uniform periodic phase-space grid, fields on it, and the discrete Fourier transform.
//!
//! Space points are `x_j = -X + j h` per axis with `h = 2X / N`; frequencies are
//! `xi_k = k pi / X` with `k` in natural FFT order (`0, 1, .., N/2 - 1, -N/2, .., -1`).
//! Flattened arrays are row-major with axis 0 slowest.
//!
//! The transform follows `u^(xi) = int e^{-i x xi} u(x) dx`, discretized so that
//! `sum |u^|^2 dxi^d = (2 pi)^d sum |u|^2 h^d`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 3;

/// A point in `R^d`, `d <= MAX_DIM`; unused trailing coordinates are zero.
pub type Point = [f64; MAX_DIM];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    n: usize,
    half_width: f64,
}

impl Grid {
    pub fn new(dim: usize, n: usize, half_width: f64) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in 1..={MAX_DIM}")));
        }
        if n < 2 || !n.is_multiple_of(2) {
            return Err(Error::InvalidGrid(format!("points per axis must be even and >= 2, got {n}")));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidGrid(format!("half width must be positive, got {half_width}")));
        }
        Ok(Self { dim, n, half_width })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.n
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Total number of grid points, `N^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn freq_spacing(&self) -> f64 {
        std::f64::consts::PI / self.half_width
    }

    pub fn max_frequency(&self) -> f64 {
        std::f64::consts::PI * self.n as f64 / (2.0 * self.half_width)
    }

    /// `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// `(pi / X)^d`.
    pub fn freq_cell_volume(&self) -> f64 {
        self.freq_spacing().powi(self.dim as i32)
    }

    pub fn coordinate(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.spacing()
    }

    /// Signed frequency index of the unsigned position `k`.
    pub fn signed_index(&self, k: usize) -> i64 {
        if k < self.n / 2 {
            k as i64
        } else {
            k as i64 - self.n as i64
        }
    }

    pub fn frequency(&self, k: usize) -> f64 {
        self.signed_index(k) as f64 * self.freq_spacing()
    }

    /// Per-axis indices of a flat index.
    pub fn unflatten(&self, mut flat: usize) -> [usize; MAX_DIM] {
        let mut idx = [0usize; MAX_DIM];
        for a in (0..self.dim).rev() {
            idx[a] = flat % self.n;
            flat /= self.n;
        }
        idx
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx[..self.dim].iter().fold(0, |acc, &i| acc * self.n + i)
    }

    pub fn point(&self, flat: usize) -> Point {
        let idx = self.unflatten(flat);
        let mut p = [0.0; MAX_DIM];
        for a in 0..self.dim {
            p[a] = self.coordinate(idx[a]);
        }
        p
    }

    pub fn wavevector(&self, flat: usize) -> Point {
        let idx = self.unflatten(flat);
        let mut p = [0.0; MAX_DIM];
        for a in 0..self.dim {
            p[a] = self.frequency(idx[a]);
        }
        p
    }

    /// Flat index of the frequency `-xi_k` (modulo the lattice period).
    pub fn mirror_index(&self, flat: usize) -> usize {
        let idx = self.unflatten(flat);
        let mut m = [0usize; MAX_DIM];
        for a in 0..self.dim {
            m[a] = (self.n - idx[a]) % self.n;
        }
        self.flatten(&m)
    }

    /// All space points, in flat order.
    pub fn points(&self) -> Vec<Point> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// All wavevectors, in flat (natural) order.
    pub fn wavevectors(&self) -> Vec<Point> {
        (0..self.len()).map(|i| self.wavevector(i)).collect()
    }

    /// Flat indices of points on the outer boundary layer of the box.
    pub fn boundary_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&f| {
                let idx = self.unflatten(f);
                idx[..self.dim].iter().any(|&i| i == 0 || i == self.n - 1)
            })
            .collect()
    }

    pub fn check_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                left: format!("{self:?}"),
                right: format!("{other:?}"),
            })
        }
    }
}

/// A complex-valued function sampled on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<Complex64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "field has {} values, grid has {} points",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("field values".into()));
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_parts_unchecked(grid: Grid, values: Vec<Complex64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn constant(grid: Grid, c: Complex64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    /// Samples `f` at every space point.
    pub fn from_fn<F: Fn(&[f64]) -> Complex64>(grid: Grid, f: F) -> Result<Self> {
        let values = (0..grid.len())
            .map(|i| {
                let p = grid.point(i);
                f(&p[..grid.dim()])
            })
            .collect();
        Self::new(grid, values)
    }

    pub fn from_real_fn<F: Fn(&[f64]) -> f64>(grid: Grid, f: F) -> Result<Self> {
        Self::from_fn(grid, |x| Complex64::new(f(x), 0.0))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn map<F: Fn(Complex64) -> Complex64>(&self, f: F) -> Field {
        Field::from_parts_unchecked(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Pointwise combination; the grids must agree.
    pub fn zip_with<F: Fn(Complex64, Complex64) -> Complex64>(&self, other: &Field, f: F) -> Result<Field> {
        self.grid.check_same(&other.grid)?;
        Ok(Field::from_parts_unchecked(
            self.grid,
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Field) -> Result<Field> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, c: Complex64) -> Field {
        self.map(|v| v * c)
    }

    pub fn scale_real(&self, c: f64) -> Field {
        self.map(|v| v * c)
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: Complex64, other: &Field) -> Result<()> {
        self.grid.check_same(&other.grid)?;
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
        Ok(())
    }

    /// Discrete `L^2` norm `(h^d sum |f|^2)^{1/2}`.
    pub fn l2_norm(&self) -> f64 {
        (self.grid.cell_volume() * self.values.iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Largest modulus on the boundary layer; used to guard against wrap-around.
    pub fn boundary_max_abs(&self) -> f64 {
        self.grid
            .boundary_indices()
            .into_iter()
            .map(|i| self.values[i].norm())
            .fold(0.0, f64::max)
    }

    pub fn real_part(&self) -> Field {
        self.map(|v| Complex64::new(v.re, 0.0))
    }

    pub fn max_imag(&self) -> f64 {
        self.values.iter().map(|v| v.im.abs()).fold(0.0, f64::max)
    }
}

type PlanCache = Mutex<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)>;

fn fft_cache() -> &'static PlanCache {
    static CACHE: OnceLock<PlanCache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new((FftPlanner::new(), HashMap::new())))
}

fn plan(n: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    let mut guard = fft_cache().lock().expect("fft planner poisoned");
    let (planner, map) = &mut *guard;
    map.entry((n, forward))
        .or_insert_with(|| {
            if forward {
                planner.plan_fft_forward(n)
            } else {
                planner.plan_fft_inverse(n)
            }
        })
        .clone()
}

/// Unnormalized FFT along every axis of a row-major `N^d` array.
fn fft_nd(data: &mut [Complex64], n: usize, dim: usize, forward: bool) {
    let fft = plan(n, forward);
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    // last axis: contiguous lines
    fft.process_with_scratch(data, &mut scratch);
    if dim == 1 {
        return;
    }
    let total = data.len();
    let mut buf = vec![Complex64::new(0.0, 0.0); total];
    for axis in 0..dim - 1 {
        let stride = n.pow((dim - 1 - axis) as u32);
        let block = stride * n;
        // gather lines along `axis` into contiguous storage
        let mut line = 0;
        for base in (0..total).step_by(block) {
            for off in 0..stride {
                let start = line * n;
                for i in 0..n {
                    buf[start + i] = data[base + off + i * stride];
                }
                line += 1;
            }
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        let mut line = 0;
        for base in (0..total).step_by(block) {
            for off in 0..stride {
                let start = line * n;
                for i in 0..n {
                    data[base + off + i * stride] = buf[start + i];
                }
                line += 1;
            }
        }
    }
}

/// `(-1)^{k_1 + .. + k_d}` for the flat frequency index.
fn parity_sign(grid: &Grid, flat: usize) -> f64 {
    let idx = grid.unflatten(flat);
    if idx[..grid.dim()].iter().sum::<usize>() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Forward transform into natural frequency order.
pub fn forward_dft(f: &Field) -> Result<Field> {
    if !f.is_finite() {
        return Err(Error::NonFinite("forward_dft input".into()));
    }
    let grid = *f.grid();
    let mut data = f.values().to_vec();
    fft_nd(&mut data, grid.points_per_axis(), grid.dim(), true);
    let h = grid.cell_volume();
    for (k, v) in data.iter_mut().enumerate() {
        *v *= h * parity_sign(&grid, k);
    }
    Ok(Field::from_parts_unchecked(grid, data))
}

/// Inverse of [`forward_dft`]: `u(x) = (2 pi)^{-d} sum e^{i x xi} u^(xi) dxi^d`.
pub fn inverse_dft(f: &Field) -> Result<Field> {
    if !f.is_finite() {
        return Err(Error::NonFinite("inverse_dft input".into()));
    }
    let grid = *f.grid();
    let mut data = f.values().to_vec();
    for (k, v) in data.iter_mut().enumerate() {
        *v *= parity_sign(&grid, k);
    }
    fft_nd(&mut data, grid.points_per_axis(), grid.dim(), false);
    let scale = (2.0 * grid.half_width()).powi(-(grid.dim() as i32));
    for v in data.iter_mut() {
        *v *= scale;
    }
    Ok(Field::from_parts_unchecked(grid, data))
}

/// Rectangle rule `h^d sum f(x_j)`.
pub fn quadrature(f: &Field) -> Result<Complex64> {
    if !f.is_finite() {
        return Err(Error::NonFinite("quadrature input".into()));
    }
    let s: Complex64 = f.values().iter().sum();
    Ok(s * f.grid().cell_volume())
}

/// Weighted `l^2` norm of a spectrum: `((2 pi)^{-d} sum |u^|^2 dxi^d)^{1/2}`.
pub fn spectral_l2_norm(spec: &Field) -> f64 {
    let g = spec.grid();
    let s: f64 = spec.values().iter().map(|v| v.norm_sqr()).sum();
    (s * g.freq_cell_volume() / (2.0 * std::f64::consts::PI).powi(g.dim() as i32)).sqrt()
}

/// Applies the Fourier multiplier `m(xi)` to `u`.
pub fn apply_multiplier<F: Fn(&[f64]) -> Complex64>(u: &Field, m: F) -> Result<Field> {
    let grid = *u.grid();
    let mut spec = forward_dft(u)?.into_values();
    for (k, v) in spec.iter_mut().enumerate() {
        let xi = grid.wavevector(k);
        *v *= m(&xi[..grid.dim()]);
    }
    inverse_dft(&Field::from_parts_unchecked(grid, spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: Grid, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..grid.len())
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        Field::new(grid, v).unwrap()
    }

    #[test]
    fn rejects_odd_point_counts() {
        assert!(Grid::new(1, 63, 1.0).is_err());
        assert!(Grid::new(0, 64, 1.0).is_err());
        assert!(Grid::new(1, 64, -1.0).is_err());
    }

    #[test]
    fn spacing_and_frequency_bookkeeping() {
        let g = Grid::new(1, 64, 10.0).unwrap();
        assert!((g.spacing() - 20.0 / 64.0).abs() < 1e-15);
        assert!((g.freq_spacing() - std::f64::consts::PI / 10.0).abs() < 1e-15);
        assert!((g.max_frequency() - std::f64::consts::PI * 64.0 / 20.0).abs() < 1e-12);
        assert_eq!(g.signed_index(31), 31);
        assert_eq!(g.signed_index(32), -32);
        assert_eq!(g.mirror_index(1), 63);
        assert_eq!(g.mirror_index(0), 0);
        assert_eq!(g.mirror_index(32), 32);
    }

    #[test]
    fn constant_transforms_to_a_delta() {
        let g = Grid::new(2, 16, 3.0).unwrap();
        let one = Field::constant(g, Complex64::new(1.0, 0.0));
        let hat = forward_dft(&one).unwrap();
        assert!((hat.values()[0].re - 36.0).abs() < 1e-12);
        for v in &hat.values()[1..] {
            assert!(v.norm() < 1e-12);
        }
    }

    #[test]
    fn gaussian_matches_closed_form_pair() {
        let g = Grid::new(1, 64, 10.0).unwrap();
        let u = Field::from_real_fn(g, |x| (-x[0] * x[0] / 2.0).exp()).unwrap();
        let hat = forward_dft(&u).unwrap();
        let c = (2.0 * std::f64::consts::PI).sqrt();
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..g.len() {
            let xi = g.frequency(k);
            let exact = c * (-xi * xi / 2.0).exp();
            num += (hat.values()[k] - exact).norm_sqr();
            den += exact * exact;
        }
        assert!((num / den).sqrt() < 1e-8);
    }

    #[test]
    fn round_trip_and_parseval_in_two_dimensions() {
        let g = Grid::new(2, 16, 2.5).unwrap();
        let u = random_field(g, 7);
        let hat = forward_dft(&u).unwrap();
        let back = inverse_dft(&hat).unwrap();
        let err = back.sub(&u).unwrap().l2_norm() / u.l2_norm();
        assert!(err < 1e-12);
        let rel = (spectral_l2_norm(&hat) - u.l2_norm()).abs() / u.l2_norm();
        assert!(rel < 1e-12);
    }

    #[test]
    fn quadrature_examples() {
        let g = Grid::new(1, 128, 10.0).unwrap();
        let one = Field::constant(g, Complex64::new(1.0, 0.0));
        assert!((quadrature(&one).unwrap().re - 20.0).abs() < 1e-12);
        let gauss = Field::from_real_fn(g, |x| (-x[0] * x[0]).exp()).unwrap();
        assert!((quadrature(&gauss).unwrap().re - std::f64::consts::PI.sqrt()).abs() < 1e-10);
        // x_0 = -X has no partner on the periodic grid; use a function vanishing there
        let odd = Field::from_real_fn(g, |x| x[0] * (-x[0] * x[0]).exp()).unwrap();
        assert!(quadrature(&odd).unwrap().norm() < 1e-12);
    }

    #[test]
    fn quadrature_of_modulus_squared_matches_norm() {
        let g = Grid::new(1, 64, 4.0).unwrap();
        let u = random_field(g, 3);
        let q = quadrature(&u.map(|v| Complex64::new(v.norm_sqr(), 0.0))).unwrap().re;
        let n = u.l2_norm().powi(2);
        assert!((q - n).abs() / n < 1e-13);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let g = Grid::new(1, 8, 1.0).unwrap();
        let mut v = vec![Complex64::new(0.0, 0.0); 8];
        v[3] = Complex64::new(f64::NAN, 0.0);
        assert!(Field::new(g, v).is_err());
    }

    #[test]
    fn binary_operations_check_the_grid() {
        let a = Field::zeros(Grid::new(1, 8, 1.0).unwrap());
        let b = Field::zeros(Grid::new(1, 8, 2.0).unwrap());
        assert!(matches!(a.add(&b), Err(Error::GridMismatch { .. })));
    }
}
