//! Smooth random test fields.
//!
//! A field is drawn as band-limited spectral noise, synthesized in space and
//! multiplied by a Gaussian envelope so that it decays below `1e-10` at the
//! boundary of the box.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::grid::{inverse_dft, Field, Grid};
use crate::numeric::stream_seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothFieldParams {
    /// Spectral standard deviation of the random modes.
    pub bandwidth: f64,
    /// Envelope width as a fraction of the half width `X`.
    pub envelope: f64,
    /// Centre of the envelope along every axis.
    pub center: f64,
    pub real: bool,
    /// Only keep the even part `(f(x) + f(-x)) / 2`.
    pub even: bool,
}

impl Default for SmoothFieldParams {
    fn default() -> Self {
        Self {
            bandwidth: 2.0,
            envelope: 1.0 / 7.0,
            center: 0.0,
            real: true,
            even: false,
        }
    }
}

/// Draws a smooth random field; deterministic in `seed`.
pub fn smooth_random_field(grid: Grid, seed: u64, params: SmoothFieldParams) -> Result<Field> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, 0x5eed, 0));
    let b2 = params.bandwidth * params.bandwidth;
    let spectrum: Vec<Complex64> = (0..grid.len())
        .map(|k| {
            let xi = grid.wavevector(k);
            let r2: f64 = xi.iter().map(|c| c * c).sum();
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(re, im) * (-r2 / (2.0 * b2)).exp()
        })
        .collect();
    let base = inverse_dft(&Field::new(grid, spectrum)?)?;
    let s = params.envelope * grid.half_width();
    let mut values: Vec<Complex64> = (0..grid.len())
        .map(|j| {
            let x = grid.point(j);
            let r2: f64 = x[..grid.dim()].iter().map(|c| (c - params.center).powi(2)).sum();
            base.values()[j] * (-r2 / (2.0 * s * s)).exp()
        })
        .collect();
    if params.real {
        for v in values.iter_mut() {
            v.im = 0.0;
        }
    }
    if params.even {
        let reflected: Vec<Complex64> = (0..grid.len()).map(|j| values[reflect(&grid, j)]).collect();
        for (v, r) in values.iter_mut().zip(reflected) {
            *v = 0.5 * (*v + r);
        }
    }
    let f = Field::new(grid, values)?;
    let norm = f.l2_norm();
    Ok(if norm > 0.0 { f.scale_real(1.0 / norm) } else { f })
}

/// Flat index of `-x_j`; the point `-X` has no partner and maps to itself.
pub fn reflect(grid: &Grid, flat: usize) -> usize {
    let idx = grid.unflatten(flat);
    let n = grid.points_per_axis();
    let mut m = [0usize; crate::grid::MAX_DIM];
    for a in 0..grid.dim() {
        m[a] = (n - idx[a]) % n;
    }
    grid.flatten(&m)
}

/// Gaussian bump `amplitude * exp(-|x - c|^2 / (2 w^2))`.
pub fn gaussian(grid: Grid, amplitude: f64, center: f64, width: f64) -> Result<Field> {
    Field::from_real_fn(grid, |x| {
        let r2: f64 = x.iter().map(|c| (c - center).powi(2)).sum();
        amplitude * (-r2 / (2.0 * width * width)).exp()
    })
}
