//! Small numerical helpers shared across modules.

use num_complex::Complex64;

/// The weight `<v> = (1 + |v|^2)^{1/2}`.
#[inline]
pub fn bracket(v: &[f64]) -> f64 {
    (1.0 + v.iter().map(|c| c * c).sum::<f64>()).sqrt()
}

/// `<v>^p`, computed from `1 + |v|^2` directly so integer even powers stay exact.
#[inline]
pub fn bracket_pow(v: &[f64], p: f64) -> f64 {
    let s = 1.0 + v.iter().map(|c| c * c).sum::<f64>();
    if p == 0.0 {
        1.0
    } else if p == 2.0 {
        s
    } else {
        s.powf(0.5 * p)
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n > 0, "Gauss-Legendre rule needs at least one node");
    let mut rule = Vec::with_capacity(n);
    for i in 0..n {
        // Chebyshev initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        rule.push((x, w));
    }
    rule.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    rule
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Integrates `f` over `[a, b]` with the given Gauss-Legendre rule.
pub fn integrate_gl<F: FnMut(f64) -> Complex64>(rule: &[(f64, f64)], a: f64, b: f64, mut f: F) -> Complex64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = Complex64::new(0.0, 0.0);
    for &(x, w) in rule {
        acc += w * f(mid + half * x);
    }
    acc * half
}

/// `(1 - e^{-z}) / z`, continuous at `z = 0`.
pub fn phi1(z: Complex64) -> Complex64 {
    if z.norm() < 1e-4 {
        Complex64::new(1.0, 0.0) - z / 2.0 + z * z / 6.0 - z * z * z / 24.0
    } else {
        (Complex64::new(1.0, 0.0) - (-z).exp()) / z
    }
}

/// Neumaier-compensated sum; deterministic for a fixed input order.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    let mut s = CompensatedSum::new();
    for v in it {
        s.add(v);
    }
    s.value()
}

/// SplitMix64 finalizer; used to derive independent RNG seeds from counters.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the stream identified by `(seed, a, b)`.
pub fn stream_seed(seed: u64, a: u64, b: u64) -> u64 {
    mix64(mix64(mix64(seed) ^ a.wrapping_mul(0xD6E8_FEB8_6659_FD93)) ^ b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let rule = gauss_legendre(8);
        let w: f64 = rule.iter().map(|r| r.1).sum();
        assert!((w - 2.0).abs() < 1e-14);
        // degree 15 is the exactness limit for 8 nodes
        let v = integrate_gl(&rule, 0.0, 2.0, |x| Complex64::new(x.powi(15), 0.0));
        assert!((v.re - 2f64.powi(16) / 16.0).abs() < 1e-9);
    }

    #[test]
    fn phi1_is_continuous_at_zero() {
        let a = phi1(Complex64::new(1e-5, 0.0));
        let b = phi1(Complex64::new(1.0001e-4, 0.0));
        assert!((a.re - 1.0).abs() < 1e-5);
        assert!((b.re - (1.0 - (-1.0001e-4f64).exp()) / 1.0001e-4).abs() < 1e-12);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let v = compensated_sum([1e16, 1.0, -1e16]);
        assert_eq!(v, 1.0);
    }
}
