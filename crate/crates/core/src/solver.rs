//! Mild solutions by pathwise Picard iteration.
//!
//! On the uniform grid `t_n = n dt` the map is
//! `T u(t_n) = E(t_n, 0) u0 + sum_{k < n} [W(t_n; t_k, t_{k+1}) gamma_k + E(t_n, t_k)(sigma_k dW_k)]`
//! with `gamma_k = gamma(t_k, u(t_k))`, `sigma_k = sigma(t_k, u(t_k))`,
//! `W(t; a, b) = int_a^b E(t, tau) dtau` and `dW_k = sum_{j < K} beta_j^{(k)} h_j`.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::{smooth_random_field, SmoothFieldParams};
use crate::fundsol::Propagator;
use crate::grid::{forward_dft, inverse_dft, Field, Grid};
use crate::nemytskii::{apply_nemytskii, lip_battery, verify_lip, LipParams, Locality, NemytskiiFn};
use crate::noise::{build_basis, check_spectral_condition, hs_norm, sample_path, CameronMartinBasis, NoisePath, SpectralMeasure};
use crate::numeric::{compensated_sum, stream_seed};
use crate::sgcalc::{check_parabolicity, sk_norm, SgSymbol, SobolevKatoIndex};

/// Drift and diffusion terms along a path; `None` when the coefficient is zero.
type Forcings = (Option<Vec<Field>>, Option<Vec<Field>>);
/// Per-path squared norms, contraction estimate and Picard iterations; `None` for a failed path.
type PathOutcome = Option<(Vec<f64>, f64, usize)>;

/// Contraction factor below which a horizon is accepted.
pub const CONTRACTION_THRESHOLD: f64 = 0.9;
/// Random perturbation pairs per noise path in the horizon sweep.
pub const SWEEP_PAIRS: usize = 5;
/// Reserved noise paths in the horizon sweep.
pub const SWEEP_PATHS: usize = 3;
/// Largest tolerated fraction of failed Monte Carlo paths.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;
/// Size of sweep perturbations relative to `max(||u0||, 1e-3)`.
pub const PERTURBATION_SCALE: f64 = 0.1;

const SWEEP_STREAM: u64 = 1;
const CERTIFY_STREAM: u64 = 2;
const UNIQUENESS_STREAM: u64 = 3;

/// The semilinear Cauchy problem `(d_t + Op(a)) u = gamma(t, x, u) + sigma(t, x, u) dW`, `u(0) = u0`.
#[derive(Debug, Clone)]
pub struct CauchyProblemSpec {
    pub generator: SgSymbol,
    pub gamma: NemytskiiFn,
    pub sigma: NemytskiiFn,
    pub u0: Field,
    pub measure: SpectralMeasure,
    pub horizon: f64,
    pub index: SobolevKatoIndex,
    pub kappa: f64,
    pub lambda: f64,
}

impl CauchyProblemSpec {
    pub fn grid(&self) -> &Grid {
        self.u0.grid()
    }

    /// The hypoellipticity order `m'` of the generator.
    pub fn m_prime(&self) -> Result<f64> {
        self.generator.hypo_order().map(|o| o.m).ok_or(Error::MissingHypoOrder)
    }

    pub fn mu_prime(&self) -> Result<f64> {
        self.generator.hypo_order().map(|o| o.mu).ok_or(Error::MissingHypoOrder)
    }

    /// `Lip(z - kappa m', zeta, kappa m', 0)`: what `gamma` and `sigma` must declare.
    pub fn required_lip_params(&self) -> Result<LipParams> {
        let km = self.kappa * self.m_prime()?;
        LipParams::new(self.index.z - km, self.index.zeta, km, 0.0)
    }

    /// `l = max(kappa, lambda)`.
    pub fn ell(&self) -> f64 {
        self.kappa.max(self.lambda)
    }

    /// Cheap structural checks shared by every solver entry point.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("kappa", self.kappa), ("lambda", self.lambda)] {
            if !(0.0..0.5).contains(&v) {
                return Err(Error::InvalidParameter(format!("{name} = {v} is not in [0, 1/2)")));
            }
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::InvalidParameter(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.horizon > self.generator.horizon() {
            return Err(Error::TimeOutOfRange {
                t: self.horizon,
                horizon: self.generator.horizon(),
            });
        }
        self.m_prime()?;
        self.grid().check_same(self.measure.grid())?;
        if let Locality::Ball { center, .. } = self.gamma.locality() {
            self.grid().check_same(center.grid())?;
        }
        if let Locality::Ball { center, .. } = self.sigma.locality() {
            self.grid().check_same(center.grid())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct SolverConfig {
    pub dt: f64,
    /// Basis truncation `K`.
    pub modes: usize,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub paths: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: 1e-2,
            modes: 16,
            tolerance: 1e-8,
            max_iterations: 50,
            paths: 100,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::InvalidParameter(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if self.modes == 0 || self.paths == 0 || self.max_iterations == 0 {
            return Err(Error::InvalidParameter("modes, paths and max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// A converged pathwise fixed point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSolution {
    pub path_id: u64,
    pub times: Vec<f64>,
    #[serde(skip)]
    pub states: Vec<Field>,
    /// `sup_n ||u^{(i+1)}(t_n) - u^{(i)}(t_n)||_{z, zeta}` per iteration.
    pub residuals: Vec<f64>,
    /// Largest ratio of successive nonzero residuals; `0` with fewer than two.
    pub q_hat: f64,
}

impl PathSolution {
    pub fn iterations(&self) -> usize {
        self.residuals.len()
    }

    pub fn final_state(&self) -> &Field {
        self.states.last().expect("solution has at least the initial state")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HorizonEstimate {
    pub t0: f64,
    pub q_hat: f64,
    /// `(T, q_hat(T))` for every horizon tried, largest first.
    pub sweep: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContractionCertificate {
    pub t0: f64,
    pub q_hat: f64,
    pub pairs: usize,
    pub paths: usize,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct UniquenessReport {
    /// `sup_n ||u_a(t_n) - u_b(t_n)||_{z, zeta}` over all pairs of initial guesses.
    pub max_difference: f64,
    pub tolerance: f64,
    pub guesses: usize,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentReport {
    pub times: Vec<f64>,
    /// Sample mean of `||u(t)||_{z, zeta}^2`.
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub std_error: Vec<f64>,
    pub paths: usize,
    pub failed: usize,
    pub max_q_hat: f64,
    pub max_iterations: usize,
}

impl MomentReport {
    pub fn is_finite(&self) -> bool {
        self.mean.iter().chain(&self.variance).all(|v| v.is_finite())
    }
}

/// A deterministic operator-valued step function `Phi(s_k) h = E(T, s_k)[sigma_k h]`,
/// or `sigma_k h` without the propagator.
#[derive(Debug, Clone)]
pub struct StepProcess {
    pub sigma: Vec<Field>,
    /// Propagate each step to this time; `None` uses the identity.
    pub propagate_to: Option<f64>,
}

impl StepProcess {
    pub fn zero(grid: Grid, steps: usize) -> Self {
        Self {
            sigma: vec![Field::zeros(grid); steps],
            propagate_to: None,
        }
    }

    /// Multiplication by `sigma` on every step.
    pub fn multiplier(sigma: Field, steps: usize, propagate_to: Option<f64>) -> Self {
        Self {
            sigma: vec![sigma; steps],
            propagate_to,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IsometryReport {
    /// Monte Carlo mean of `||int Phi dW||_{z, zeta}^2`.
    pub mc_mean: f64,
    pub mc_std_error: f64,
    /// `sum_k dt hs_norm(Phi(s_k))^2`.
    pub hs_sum: f64,
    /// `|mc_mean - hs_sum| / mc_std_error`.
    pub z_score: f64,
    pub paths: usize,
    pub passes: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CrosscheckReport {
    pub modes: usize,
    /// Number of independent modes of the full synthesis.
    pub full_dimension: usize,
    /// Relative discrete `L^2_t L^2_x` discrepancy between the two solutions.
    pub relative_l2: f64,
    /// The same discrepancy for the stochastic terms alone (`0` if both vanish).
    pub stochastic_relative_l2: f64,
    /// `(K, discrepancy of the stochastic terms)` for doubling truncations.
    pub by_modes: Vec<(usize, f64)>,
    pub passes: bool,
}

/// Relative target for [`MildSolver::linear_crosscheck`].
pub const CROSSCHECK_TOLERANCE: f64 = 0.01;

/// Solver for one problem and configuration on the horizon `[0, T]`.
#[derive(Debug, Clone)]
pub struct MildSolver {
    spec: Arc<CauchyProblemSpec>,
    config: SolverConfig,
    propagator: Arc<Propagator>,
    basis: Arc<CameronMartinBasis>,
    horizon: f64,
    steps: usize,
    dt: f64,
}

fn steps_for(horizon: f64, dt: f64) -> (usize, f64) {
    let n = ((horizon / dt).round() as usize).max(1);
    (n, horizon / n as f64)
}

fn is_path_failure(e: &Error) -> bool {
    match e {
        Error::AtTime { source, .. } => is_path_failure(source),
        Error::Nonconvergence { .. } | Error::OutOfNeighborhood { .. } | Error::NonFinite(_) => true,
        _ => false,
    }
}

impl MildSolver {
    pub fn new(spec: CauchyProblemSpec, config: SolverConfig) -> Result<Self> {
        spec.validate()?;
        config.validate()?;
        let propagator = Arc::new(Propagator::for_symbol(spec.generator.clone(), *spec.grid()));
        let basis = Arc::new(build_basis(&spec.measure, config.modes)?);
        let horizon = spec.horizon;
        let (steps, dt) = steps_for(horizon, config.dt);
        Ok(Self {
            spec: Arc::new(spec),
            config,
            propagator,
            basis,
            horizon,
            steps,
            dt,
        })
    }

    /// The same solver on `[0, horizon]`, sharing propagator caches and basis.
    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon <= self.spec.horizon * (1.0 + 1e-12)) {
            return Err(Error::InvalidParameter(format!(
                "horizon {horizon} outside (0, {}]",
                self.spec.horizon
            )));
        }
        let (steps, dt) = steps_for(horizon, self.config.dt);
        Ok(Self {
            horizon,
            steps,
            dt,
            ..self.clone()
        })
    }

    pub fn spec(&self) -> &CauchyProblemSpec {
        &self.spec
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn propagator(&self) -> &Propagator {
        &self.propagator
    }

    pub fn basis(&self) -> &CameronMartinBasis {
        &self.basis
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// The effective step `horizon / steps`.
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|n| n as f64 * self.dt).collect()
    }

    /// Noise path `path_id` of the configured seed.
    pub fn noise_path(&self, path_id: u64) -> Result<NoisePath> {
        sample_path(self.basis.len(), self.steps, self.dt, self.config.seed, path_id)
    }

    fn noise_fields(&self, path: &NoisePath) -> Result<Vec<Field>> {
        if path.n_steps() != self.steps || (path.dt - self.dt).abs() > 1e-12 * self.dt {
            return Err(Error::Precondition(format!(
                "noise path has {} steps of {}, solver needs {} steps of {}",
                path.n_steps(),
                path.dt,
                self.steps,
                self.dt
            )));
        }
        Ok((0..self.steps)
            .map(|k| path.field_increment(&self.basis, k, self.basis.len()))
            .collect())
    }

    /// `v0(t_n) = E(t_n, 0) u0`.
    pub fn free_evolution(&self) -> Result<Vec<Field>> {
        self.assemble(None, None)
    }

    /// `u0 + int E gamma + int E dW`-type sums for given per-step forcings.
    fn assemble(&self, drift: Option<&[Field]>, noise: Option<&[Field]>) -> Result<Vec<Field>> {
        let p = &self.propagator;
        let u0 = &self.spec.u0;
        let g = *u0.grid();
        let n = self.steps;
        if p.is_exact_semigroup() {
            let e = p.spectral_factor(self.dt, 0.0)?;
            let w = p.spectral_weight(self.dt, 0.0, self.dt)?;
            let mut s = forward_dft(u0)?.into_values();
            let mut out = Vec::with_capacity(n + 1);
            out.push(u0.clone());
            for k in 0..n {
                if let Some(nz) = noise {
                    for (a, b) in s.iter_mut().zip(forward_dft(&nz[k])?.values()) {
                        *a += b;
                    }
                }
                for (a, b) in s.iter_mut().zip(&e) {
                    *a *= b;
                }
                if let Some(dr) = drift {
                    for (a, (b, c)) in s.iter_mut().zip(forward_dft(&dr[k])?.values().iter().zip(&w)) {
                        *a += b * c;
                    }
                }
                let u = inverse_dft(&Field::from_parts_unchecked(g, s.clone()))?;
                if !u.is_finite() {
                    return Err(Error::NonFinite(format!("state at t = {}", (k + 1) as f64 * self.dt)));
                }
                out.push(u);
            }
            return Ok(out);
        }
        let times = self.times();
        let one = Complex64::new(1.0, 0.0);
        (0..=n)
            .into_par_iter()
            .map(|i| {
                let t = times[i];
                let mut u = p.propagate(t, 0.0, u0)?;
                for k in 0..i {
                    if let Some(dr) = drift {
                        u.axpy(one, &p.apply_weight(t, times[k], times[k + 1], &dr[k])?)?;
                    }
                    if let Some(nz) = noise {
                        u.axpy(one, &p.propagate(t, times[k], &nz[k])?)?;
                    }
                }
                if !u.is_finite() {
                    return Err(Error::NonFinite(format!("state at t = {t}")));
                }
                Ok(u)
            })
            .collect()
    }

    fn forcings(&self, u: &[Field], noise: &[Field]) -> Result<Forcings> {
        let (gamma, sigma) = (&self.spec.gamma, &self.spec.sigma);
        let times = self.times();
        let drift = if gamma.is_zero() {
            None
        } else {
            Some(
                (0..self.steps)
                    .map(|k| apply_nemytskii(gamma, times[k], &u[k]).map_err(|e| e.at_time(times[k])))
                    .collect::<Result<Vec<_>>>()?,
            )
        };
        let stoch = if sigma.is_zero() {
            None
        } else {
            Some(
                (0..self.steps)
                    .map(|k| {
                        apply_nemytskii(sigma, times[k], &u[k])
                            .and_then(|s| s.mul(&noise[k]))
                            .map_err(|e| e.at_time(times[k]))
                    })
                    .collect::<Result<Vec<_>>>()?,
            )
        };
        Ok((drift, stoch))
    }

    fn map_with(&self, noise: &[Field], u: &[Field]) -> Result<Vec<Field>> {
        if u.len() != self.steps + 1 {
            return Err(Error::Precondition(format!(
                "state has {} time points, grid has {}",
                u.len(),
                self.steps + 1
            )));
        }
        let (drift, stoch) = self.forcings(u, noise)?;
        self.assemble(drift.as_deref(), stoch.as_deref())
    }

    /// One application of the Picard map on the time grid.
    pub fn picard_map(&self, path: &NoisePath, u: &[Field]) -> Result<Vec<Field>> {
        let noise = self.noise_fields(path)?;
        self.map_with(&noise, u)
    }

    fn sup_distance(&self, a: &[Field], b: &[Field]) -> Result<f64> {
        let mut m: f64 = 0.0;
        for (x, y) in a.iter().zip(b) {
            m = m.max(sk_norm(&x.sub(y)?, self.spec.index)?);
        }
        Ok(m)
    }

    /// Discrete `L^2(0, T; H^{z, zeta})` norm.
    fn l2t_norm(&self, a: &[Field]) -> Result<f64> {
        let parts = a
            .iter()
            .map(|x| Ok(self.dt * sk_norm(x, self.spec.index)?.powi(2)))
            .collect::<Result<Vec<_>>>()?;
        Ok(compensated_sum(parts).sqrt())
    }

    /// Iterates from `v0` until the sup-in-time residual drops below the tolerance.
    pub fn solve_path(&self, path: &NoisePath) -> Result<PathSolution> {
        self.solve_path_from(path, self.free_evolution()?)
    }

    pub fn solve_path_from(&self, path: &NoisePath, initial: Vec<Field>) -> Result<PathSolution> {
        let noise = self.noise_fields(path)?;
        let mut u = initial;
        let mut residuals = Vec::new();
        for _ in 0..self.config.max_iterations {
            let next = self.map_with(&noise, &u)?;
            let r = self.sup_distance(&next, &u)?;
            residuals.push(r);
            u = next;
            if r <= self.config.tolerance {
                let q_hat = residuals
                    .windows(2)
                    .filter(|w| w[0] > 0.0)
                    .map(|w| w[1] / w[0])
                    .fold(0.0, f64::max);
                return Ok(PathSolution {
                    path_id: path.path_id,
                    times: self.times(),
                    states: u,
                    residuals,
                    q_hat,
                });
            }
        }
        Err(Error::Nonconvergence {
            iterations: residuals.len(),
            last: *residuals.last().unwrap_or(&f64::NAN),
            residuals,
        })
    }

    fn perturbation(&self, stream: u64, i: u64) -> Result<Field> {
        let idx = self.spec.index;
        let mut amp = PERTURBATION_SCALE * sk_norm(&self.spec.u0, idx)?.max(1e-3);
        for g in [&self.spec.gamma, &self.spec.sigma] {
            if let Locality::Ball { radius, .. } = g.locality() {
                amp = amp.min(0.25 * radius);
            }
        }
        let f = smooth_random_field(
            *self.spec.grid(),
            stream_seed(self.config.seed, 0x7e57 + stream, i),
            SmoothFieldParams::default(),
        )?;
        Ok(f.scale_real(amp / sk_norm(&f, idx)?))
    }

    /// `max ||T u - T v|| / ||u - v||` in `L^2(0, T; H^{z, zeta})` over random
    /// pairs `u, v = v0 + p` with time-constant perturbations `p`.
    ///
    /// A pair that leaves a locality ball yields `+inf`.
    pub fn contraction_factor(&self, stream: u64, pairs: usize, paths: usize) -> Result<f64> {
        let v0 = self.free_evolution()?;
        let mut q: f64 = 0.0;
        for j in 0..paths {
            let path = sample_path(
                self.basis.len(),
                self.steps,
                self.dt,
                self.config.seed,
                u64::MAX - 64 * stream - j as u64,
            )?;
            let noise = self.noise_fields(&path)?;
            for i in 0..pairs {
                let p1 = self.perturbation(stream, 2 * i as u64)?;
                let p2 = self.perturbation(stream, 2 * i as u64 + 1)?;
                let u: Vec<Field> = v0.iter().map(|v| v.add(&p1)).collect::<Result<_>>()?;
                let w: Vec<Field> = v0.iter().map(|v| v.add(&p2)).collect::<Result<_>>()?;
                let (tu, tw) = match (self.map_with(&noise, &u), self.map_with(&noise, &w)) {
                    (Ok(a), Ok(b)) => (a, b),
                    (Err(e), _) | (_, Err(e)) if is_path_failure(&e) => return Ok(f64::INFINITY),
                    (Err(e), _) | (_, Err(e)) => return Err(e),
                };
                let num: Vec<Field> = tu.iter().zip(&tw).map(|(a, b)| a.sub(b)).collect::<Result<_>>()?;
                let den: Vec<Field> = u.iter().zip(&w).map(|(a, b)| a.sub(b)).collect::<Result<_>>()?;
                q = q.max(self.l2t_norm(&num)? / self.l2t_norm(&den)?);
            }
        }
        Ok(q)
    }

    /// Largest `T0` in `{T, T/2, T/4, ...}`, not below `dt`, with contraction factor below 0.9.
    pub fn estimate_t0(&self) -> Result<HorizonEstimate> {
        let mut sweep = Vec::new();
        let mut h = self.horizon;
        while h >= self.config.dt * (1.0 - 1e-12) {
            let q = self.with_horizon(h)?.contraction_factor(SWEEP_STREAM, SWEEP_PAIRS, SWEEP_PATHS)?;
            sweep.push((h, q));
            if q < CONTRACTION_THRESHOLD {
                return Ok(HorizonEstimate { t0: h, q_hat: q, sweep });
            }
            h *= 0.5;
        }
        Err(Error::NoAdmissibleHorizon {
            dt: self.config.dt,
            sweep,
        })
    }

    /// Re-measures the contraction factor on the current horizon with fresh pairs and paths.
    pub fn certify(&self) -> Result<ContractionCertificate> {
        let q = self.contraction_factor(CERTIFY_STREAM, SWEEP_PAIRS, SWEEP_PATHS)?;
        Ok(ContractionCertificate {
            t0: self.horizon,
            q_hat: q,
            pairs: SWEEP_PAIRS,
            paths: SWEEP_PATHS,
            holds: q < CONTRACTION_THRESHOLD,
        })
    }

    /// Solves from `v0`, from zero and from a perturbed `v0`; compares the fixed points.
    pub fn uniqueness_check(&self, path: &NoisePath) -> Result<UniquenessReport> {
        let v0 = self.free_evolution()?;
        let p = self.perturbation(UNIQUENESS_STREAM, 0)?;
        let guesses = vec![
            v0.clone(),
            vec![Field::zeros(*self.spec.grid()); v0.len()],
            v0.iter().map(|v| v.add(&p)).collect::<Result<Vec<_>>>()?,
        ];
        let sols = guesses
            .into_iter()
            .map(|g| self.solve_path_from(path, g))
            .collect::<Result<Vec<_>>>()?;
        let mut max_difference: f64 = 0.0;
        for i in 0..sols.len() {
            for j in i + 1..sols.len() {
                max_difference = max_difference.max(self.sup_distance(&sols[i].states, &sols[j].states)?);
            }
        }
        let tolerance = 2.0 * self.config.tolerance;
        Ok(UniquenessReport {
            max_difference,
            tolerance,
            guesses: sols.len(),
            holds: max_difference <= tolerance,
        })
    }

    /// `E ||u(t_n)||_{z, zeta}^2` over paths `0..P`.
    ///
    /// Paths run in parallel; per-path results are collected in order and
    /// summed with compensation, so the table does not depend on the thread count.
    pub fn mc_moments(&self) -> Result<MomentReport> {
        let total = self.config.paths;
        let outcomes: Vec<Result<PathOutcome>> = (0..total as u64)
            .into_par_iter()
            .map(|id| {
                let path = self.noise_path(id)?;
                match self.solve_path(&path) {
                    Ok(sol) => {
                        let norms = sol
                            .states
                            .iter()
                            .map(|u| Ok(sk_norm(u, self.spec.index)?.powi(2)))
                            .collect::<Result<Vec<_>>>()?;
                        Ok(Some((norms, sol.q_hat, sol.iterations())))
                    }
                    Err(e) if is_path_failure(&e) => Ok(None),
                    Err(e) => Err(e),
                }
            })
            .collect();
        let mut rows = Vec::with_capacity(total);
        let mut failed = 0;
        for o in outcomes {
            match o? {
                Some(r) => rows.push(r),
                None => failed += 1,
            }
        }
        if failed as f64 > MAX_FAILURE_FRACTION * total as f64 {
            return Err(Error::TooManyPathFailures { failed, total });
        }
        let n_ok = rows.len();
        let times = self.times();
        let mut mean = Vec::with_capacity(times.len());
        let mut variance = Vec::with_capacity(times.len());
        let mut std_error = Vec::with_capacity(times.len());
        for n in 0..times.len() {
            // shifted by the first sample so that identical samples give exactly zero variance
            let shift = rows.first().map_or(0.0, |r| r.0[n]);
            let sum = compensated_sum(rows.iter().map(|r| r.0[n] - shift));
            let sum_sq = compensated_sum(rows.iter().map(|r| (r.0[n] - shift).powi(2)));
            let m = shift + sum / n_ok as f64;
            let v = if n_ok > 1 {
                ((sum_sq - sum * sum / n_ok as f64) / (n_ok - 1) as f64).max(0.0)
            } else {
                0.0
            };
            mean.push(m);
            variance.push(v);
            std_error.push((v / n_ok as f64).sqrt());
        }
        Ok(MomentReport {
            times,
            mean,
            variance,
            std_error,
            paths: n_ok,
            failed,
            max_q_hat: rows.iter().map(|r| r.1).fold(0.0, f64::max),
            max_iterations: rows.iter().map(|r| r.2).max().unwrap_or(0),
        })
    }

    /// Compares `E ||sum_k Phi(s_k) dW_k||^2` (Monte Carlo over `paths`) with `sum_k dt hs_norm(Phi(s_k))^2`.
    pub fn ito_isometry_test(&self, step: &StepProcess, paths: usize) -> Result<IsometryReport> {
        if step.sigma.len() != self.steps {
            return Err(Error::Precondition(format!(
                "step process has {} steps, solver has {}",
                step.sigma.len(),
                self.steps
            )));
        }
        if paths < 2 {
            return Err(Error::InvalidParameter("isometry test needs at least two paths".into()));
        }
        let p = &self.propagator;
        let idx = self.spec.index;
        let times = self.times();
        let phi = |k: usize, v: &Field| -> Result<Field> {
            let s = step.sigma[k].mul(v)?;
            match step.propagate_to {
                Some(t) => p.propagate(t, times[k], &s),
                None => Ok(s),
            }
        };
        // Phi(s_k) h_j for every step and mode
        let images: Vec<Vec<Field>> = (0..self.steps)
            .into_par_iter()
            .map(|k| self.basis.fields().iter().map(|h| phi(k, h)).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
        let mut hs_parts = Vec::with_capacity(self.steps);
        for imgs in &images {
            let s = compensated_sum(
                imgs.iter()
                    .map(|f| sk_norm(f, idx).map(|v| v * v))
                    .collect::<Result<Vec<_>>>()?,
            );
            hs_parts.push(self.dt * s);
        }
        let hs_sum = compensated_sum(hs_parts);
        let g = *self.spec.grid();
        let samples: Vec<f64> = (0..paths as u64)
            .into_par_iter()
            .map(|id| {
                let path = self.noise_path(id)?;
                let mut acc = vec![Complex64::new(0.0, 0.0); g.len()];
                for (k, imgs) in images.iter().enumerate() {
                    for (b, f) in path.increments[k].iter().zip(imgs) {
                        for (a, v) in acc.iter_mut().zip(f.values()) {
                            *a += b * v;
                        }
                    }
                }
                Ok(sk_norm(&Field::new(g, acc)?, idx)?.powi(2))
            })
            .collect::<Result<_>>()?;
        let n = samples.len() as f64;
        let mc_mean = compensated_sum(samples.iter().copied()) / n;
        let var = compensated_sum(samples.iter().map(|s| (s - mc_mean).powi(2))) / (n - 1.0);
        let se = (var / n).sqrt();
        let diff = (mc_mean - hs_sum).abs();
        let (z_score, passes) = if se > 0.0 {
            (diff / se, diff <= 4.0 * se)
        } else {
            (0.0, diff <= 1e-12 * hs_sum.abs().max(f64::MIN_POSITIVE))
        };
        Ok(IsometryReport {
            mc_mean,
            mc_std_error: se,
            hs_sum,
            z_score,
            paths,
            passes,
        })
    }

    /// For `u`-independent coefficients: solution from the `K`-mode basis expansion
    /// against direct synthesis of the full noise field on the same path.
    ///
    /// The full field is `sum_o zeta_o sqrt(W_o) cos(xi_o . x)` over the mirror
    /// orbits `o` of the discretized measure, with orbit coordinates
    /// `zeta_o = sum_j beta_j f_j(o) sqrt(W_o)` drawn from the same stream.
    pub fn linear_crosscheck(&self, path_id: u64) -> Result<CrosscheckReport> {
        let spec = &self.spec;
        if spec.gamma.depends_on_u() || spec.sigma.depends_on_u() {
            return Err(Error::Precondition(
                "linear cross-check needs gamma and sigma independent of u".into(),
            ));
        }
        let dim = spec.measure.symmetric_dimension();
        let full = build_basis(&spec.measure, dim)?;
        let k = self.basis.len();
        let path = sample_path(dim, self.steps, self.dt, self.config.seed, path_id)?;
        let support = full.support();
        let orbit_weight: Vec<f64> = support
            .iter()
            .enumerate()
            .map(|(i, p)| if p.mirror == i { p.weight } else { p.weight + support[p.mirror].weight })
            .collect();
        // direct synthesis on the full orbit decomposition
        let direct: Vec<Field> = (0..self.steps)
            .map(|step| {
                let beta = &path.increments[step];
                let mut coef = vec![0.0; support.len()];
                for (b, f) in beta.iter().zip(full.coefficients()) {
                    for (c, v) in coef.iter_mut().zip(f) {
                        *c += b * v;
                    }
                }
                // coef(p) = sum_j beta_j f_j(p) = zeta_o / sqrt(W_o) on the orbit of p
                let zeta: Vec<f64> = coef.iter().zip(&orbit_weight).map(|(c, w)| c * w.sqrt()).collect();
                synthesize_orbits(spec.grid(), support, &orbit_weight, &zeta)
            })
            .collect::<Result<_>>()?;
        let truncated = |kk: usize| -> Vec<Field> {
            (0..self.steps)
                .map(|step| full.synthesize(&path.increments[step][..kk]))
                .collect()
        };
        let zeros = vec![Field::zeros(*spec.grid()); self.steps + 1];
        let stochastic = |noise: &[Field]| -> Result<Vec<Field>> {
            let (_, s) = self.forcings(&zeros, noise)?;
            match s {
                Some(s) => {
                    let with = self.assemble(None, Some(&s))?;
                    let without = self.free_evolution()?;
                    with.iter().zip(&without).map(|(a, b)| a.sub(b)).collect()
                }
                None => Ok(zeros.clone()),
            }
        };
        let rel = |a: &[Field], b: &[Field]| -> Result<f64> {
            let num = compensated_sum(a.iter().zip(b).map(|(x, y)| x.sub(y).map(|d| d.l2_norm().powi(2))).collect::<Result<Vec<_>>>()?);
            let den = compensated_sum(b.iter().map(|x| x.l2_norm().powi(2)));
            Ok(if num == 0.0 { 0.0 } else { (num / den).sqrt() })
        };
        let s_direct = stochastic(&direct)?;
        let mut by_modes = Vec::new();
        let mut kk = 1;
        while kk < k {
            by_modes.push((kk, rel(&stochastic(&truncated(kk))?, &s_direct)?));
            kk *= 2;
        }
        let trunc = truncated(k);
        let s_trunc = stochastic(&trunc)?;
        let stochastic_relative_l2 = rel(&s_trunc, &s_direct)?;
        by_modes.push((k, stochastic_relative_l2));
        let u_trunc = self.map_with(&trunc, &zeros)?;
        let u_direct = self.map_with(&direct, &zeros)?;
        let relative_l2 = rel(&u_trunc, &u_direct)?;
        Ok(CrosscheckReport {
            modes: k,
            full_dimension: dim,
            relative_l2,
            stochastic_relative_l2,
            by_modes,
            passes: relative_l2 < CROSSCHECK_TOLERANCE,
        })
    }
}

/// `sum_p zeta_p / sqrt(W_p) w_p cos(xi_p . x)`, by FFT on grid frequencies and directly for atoms.
fn synthesize_orbits(
    g: &Grid,
    support: &[crate::noise::SupportPoint],
    orbit_weight: &[f64],
    zeta: &[f64],
) -> Result<Field> {
    let d = g.dim();
    let scale = (2.0 * std::f64::consts::PI).powi(d as i32) / g.freq_cell_volume();
    let mut spec = vec![Complex64::new(0.0, 0.0); g.len()];
    let mut atoms = Vec::new();
    for (i, p) in support.iter().enumerate() {
        let amp = if orbit_weight[i] > 0.0 { zeta[i] * p.weight / orbit_weight[i].sqrt() } else { 0.0 };
        match p.grid_index {
            Some(k) => spec[k] = Complex64::new(amp * scale, 0.0),
            None => atoms.push((p.xi, amp)),
        }
    }
    let mut values: Vec<Complex64> = inverse_dft(&Field::from_parts_unchecked(*g, spec))?
        .into_values()
        .into_iter()
        .map(|v| Complex64::new(v.re, 0.0))
        .collect();
    for (xi, amp) in atoms {
        for (j, v) in values.iter_mut().enumerate() {
            let x = g.point(j);
            let phase: f64 = (0..d).map(|a| x[a] * xi[a]).sum();
            v.re += amp * phase.cos();
        }
    }
    Field::new(*g, values)
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    pub checks: Vec<HypothesisCheck>,
}

impl HypothesisReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: &str, passed: bool, detail: impl Into<String>, value: Option<f64>) {
        self.checks.push(HypothesisCheck {
            name: name.into(),
            passed,
            detail: detail.into(),
            value,
        });
    }
}

/// Pairs drawn around `u0` for the nonlinearity certificates.
pub const LIP_CHECK_PAIRS: usize = 8;

/// Every checkable hypothesis of the existence theorem, each reported separately.
pub fn check_hypotheses(spec: &CauchyProblemSpec) -> Result<HypothesisReport> {
    let mut r = HypothesisReport { checks: Vec::new() };
    for (name, v) in [("kappa", spec.kappa), ("lambda", spec.lambda)] {
        let ok = (0.0..0.5).contains(&v);
        let detail = if ok {
            format!("{name} = {v} in [0,1/2)")
        } else {
            format!("{name} = {v} not in [0,1/2)")
        };
        r.push(&format!("{name}_range"), ok, detail, Some(v));
    }
    let h_ok = spec.horizon.is_finite() && spec.horizon > 0.0 && spec.horizon <= spec.generator.horizon();
    r.push("horizon", h_ok, format!("T = {}", spec.horizon), Some(spec.horizon));
    let grid_ok = spec.grid().check_same(spec.measure.grid()).is_ok();
    r.push("grids", grid_ok, "measure and initial datum share one grid", None);

    match check_parabolicity(&spec.generator, spec.grid()) {
        Ok(rep) => r.push(
            "parabolicity",
            rep.constant > 0.0,
            format!("C = {:e} over {} samples", rep.constant, rep.samples),
            Some(rep.constant),
        ),
        Err(e) => r.push("parabolicity", false, e.to_string(), None),
    }

    let mu_prime = spec.mu_prime();
    match &mu_prime {
        Ok(mu) if grid_ok && (0.0..0.5).contains(&spec.lambda) => {
            match check_spectral_condition(&spec.measure, spec.lambda, *mu, None) {
                Ok(rep) => r.push(
                    "spectral_condition",
                    rep.admissible,
                    format!(
                        "sup integral = {:e}, growth {:.3}, increment ratio {:.3}{}",
                        rep.value,
                        rep.growth,
                        rep.increment_ratio,
                        if rep.divergent { ", divergent" } else { "" }
                    ),
                    Some(rep.value),
                ),
                Err(e) => r.push("spectral_condition", false, e.to_string(), None),
            }
        }
        Ok(_) => r.push("spectral_condition", false, "skipped: invalid lambda or grid", None),
        Err(e) => r.push("spectral_condition", false, e.to_string(), None),
    }

    match spec.required_lip_params() {
        Ok(req) => {
            for (name, g) in [("gamma", &spec.gamma), ("sigma", &spec.sigma)] {
                let have = g.lip_params();
                let same = g.is_zero()
                    || [
                        (have.z, req.z),
                        (have.zeta, req.zeta),
                        (have.r, req.r),
                        (have.rho, req.rho),
                    ]
                    .iter()
                    .all(|(a, b)| (a - b).abs() <= 1e-9 * (1.0 + b.abs()));
                r.push(
                    &format!("{name}_lip_class"),
                    same,
                    format!(
                        "declared Lip({}, {}, {}, {}), required Lip({}, {}, {}, {})",
                        have.z, have.zeta, have.r, have.rho, req.z, req.zeta, req.r, req.rho
                    ),
                    None,
                );
                if g.is_zero() || !grid_ok {
                    continue;
                }
                let radius = match g.locality() {
                    Locality::Ball { radius, .. } => *radius,
                    Locality::Global => 1.0,
                };
                let ts = [0.0, 0.5 * spec.horizon, spec.horizon];
                let cert = lip_battery(*spec.grid(), have.source(), radius, LIP_CHECK_PAIRS, 0x11b, Some(&spec.u0))
                    .and_then(|pairs| verify_lip(g, &pairs, &ts));
                match cert {
                    Ok(c) => r.push(
                        &format!("{name}_lip_bounds"),
                        c.holds,
                        format!(
                            "empirical constant {:e}, margins {:e} / {:e}",
                            c.c_hat, c.worst_bound_margin, c.worst_lipschitz_margin
                        ),
                        Some(c.c_hat),
                    ),
                    Err(e) => r.push(&format!("{name}_lip_bounds"), false, e.to_string(), None),
                }
            }
        }
        Err(e) => r.push("lip_class", false, e.to_string(), None),
    }
    Ok(r)
}

/// `hs_norm` of `Phi(s_k)` for a step process, exposed for reporting.
pub fn step_hs_norms(solver: &MildSolver, step: &StepProcess) -> Result<Vec<f64>> {
    let times = solver.times();
    let t_end = step.propagate_to;
    let identity = crate::fundsol::Propagator::for_symbol(
        SgSymbol::multiplier(crate::sgcalc::Order::new(0.0, 0.0), |_, _| Complex64::new(0.0, 0.0)).time_independent(),
        *solver.spec().grid(),
    );
    (0..solver.steps())
        .map(|k| match t_end {
            Some(t) => hs_norm(solver.propagator(), t, times[k], &step.sigma[k], solver.basis(), solver.spec().index),
            None => hs_norm(&identity, times[k], times[k], &step.sigma[k], solver.basis(), solver.spec().index),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::fields::gaussian;
    use crate::fundsol::duhamel_solve;
    use crate::nemytskii::LipParams;
    use crate::noise::SpectralMeasure;
    use crate::numeric::bracket_pow;
    use crate::sgcalc::Order;

    fn heat() -> SgSymbol {
        SgSymbol::multiplier(Order::new(0.0, 2.0), |_, xi| Complex64::new(bracket_pow(xi, 2.0), 0.0))
            .time_independent()
            .with_hypo_order(Order::new(0.0, 2.0))
            .unwrap()
    }

    fn sg_heat() -> SgSymbol {
        SgSymbol::separable(
            Order::new(2.0, 2.0),
            |_, x| Complex64::new(bracket_pow(x, 2.0), 0.0),
            |_, xi| Complex64::new(bracket_pow(xi, 2.0), 0.0),
        )
        .time_independent()
        .with_hypo_order(Order::new(2.0, 2.0))
        .unwrap()
    }

    fn spec(generator: SgSymbol, gamma: NemytskiiFn, sigma: NemytskiiFn) -> CauchyProblemSpec {
        let g = Grid::new(1, 32, 6.0).unwrap();
        CauchyProblemSpec {
            generator,
            gamma,
            sigma,
            u0: gaussian(g, 0.5, 0.0, 1.0).unwrap(),
            measure: SpectralMeasure::from_density(g, |xi| bracket_pow(xi, -2.0)).unwrap(),
            horizon: 0.2,
            index: SobolevKatoIndex::new(0.0, 0.0),
            kappa: 0.0,
            lambda: 0.25,
        }
    }

    fn config() -> SolverConfig {
        SolverConfig {
            dt: 0.02,
            modes: 8,
            tolerance: 1e-10,
            max_iterations: 40,
            paths: 8,
            seed: 5,
        }
    }

    fn forcing() -> NemytskiiFn {
        NemytskiiFn::from_expr(&Expr::parse("exp(-x^2)").unwrap(), LipParams::default()).unwrap()
    }

    #[test]
    fn zero_coefficients_give_the_free_evolution() {
        for gen in [heat(), sg_heat()] {
            let s = MildSolver::new(spec(gen, NemytskiiFn::zero(), NemytskiiFn::zero()), config()).unwrap();
            let path = s.noise_path(0).unwrap();
            let v0 = s.free_evolution().unwrap();
            let sol = s.solve_path(&path).unwrap();
            assert_eq!(sol.iterations(), 1);
            assert_eq!(sol.states, v0);
            assert_eq!(s.estimate_t0().unwrap().t0, 0.2);
        }
    }

    #[test]
    fn linear_problem_converges_in_two_iterations() {
        let s = MildSolver::new(spec(heat(), forcing(), forcing()), config()).unwrap();
        let sol = s.solve_path(&s.noise_path(3).unwrap()).unwrap();
        assert_eq!(sol.iterations(), 2);
        assert_eq!(sol.residuals[1], 0.0);
    }

    #[test]
    fn drift_only_map_matches_duhamel() {
        for gen in [heat(), sg_heat()] {
            let s = MildSolver::new(spec(gen, forcing(), NemytskiiFn::zero()), config()).unwrap();
            let v0 = s.free_evolution().unwrap();
            let out = s.picard_map(&s.noise_path(0).unwrap(), &v0).unwrap();
            let times = s.times();
            let g = *s.spec().grid();
            let f = Field::from_real_fn(g, |x| (-x[0] * x[0]).exp()).unwrap();
            let reference = duhamel_solve(s.propagator(), &s.spec().u0, |_| Ok(f.clone()), 0.0, &times[1..], 2).unwrap();
            for (a, b) in out[1..].iter().zip(&reference) {
                assert!(a.sub(b).unwrap().l2_norm() < 1e-8 * b.l2_norm());
            }
        }
    }

    #[test]
    fn fast_and_direct_assembly_agree() {
        // the same heat generator, once as a multiplier and once as a separable symbol
        let sep = SgSymbol::separable(
            Order::new(0.0, 2.0),
            |_, _| Complex64::new(1.0, 0.0),
            |_, xi| Complex64::new(bracket_pow(xi, 2.0), 0.0),
        )
        .time_independent()
        .with_hypo_order(Order::new(0.0, 2.0))
        .unwrap();
        let sigma = NemytskiiFn::new(LipParams::default(), |_, _, u| 0.5 * u);
        let a = MildSolver::new(spec(heat(), forcing(), sigma.clone()), config()).unwrap();
        let b = MildSolver::new(spec(sep, forcing(), sigma), config()).unwrap();
        let path = a.noise_path(1).unwrap();
        let (sa, sb) = (a.solve_path(&path).unwrap(), b.solve_path(&path).unwrap());
        for (x, y) in sa.states.iter().zip(&sb.states) {
            assert!(x.sub(y).unwrap().l2_norm() < 1e-10 * (1.0 + y.l2_norm()));
        }
    }

    #[test]
    fn cubic_drift_contracts_geometrically() {
        let cubic = NemytskiiFn::from_expr(&Expr::parse("-u^3").unwrap(), LipParams::default()).unwrap();
        let s = MildSolver::new(spec(heat(), cubic, NemytskiiFn::zero()), config()).unwrap();
        let sol = s.solve_path(&s.noise_path(0).unwrap()).unwrap();
        assert!(sol.iterations() > 2);
        assert!(sol.q_hat < CONTRACTION_THRESHOLD, "{sol:?}");
        let u = s.uniqueness_check(&s.noise_path(0).unwrap()).unwrap();
        assert!(u.holds, "{u:?}");
    }

    #[test]
    fn solutions_are_seed_deterministic() {
        let sigma = NemytskiiFn::new(LipParams::default(), |_, _, u| 0.3 * u);
        let s = MildSolver::new(spec(sg_heat(), forcing(), sigma), config()).unwrap();
        let a = s.solve_path(&s.noise_path(2).unwrap()).unwrap();
        let b = s.solve_path(&s.noise_path(2).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn deterministic_problem_has_zero_variance() {
        let s = MildSolver::new(spec(heat(), forcing(), NemytskiiFn::zero()), config()).unwrap();
        let m = s.mc_moments().unwrap();
        assert!(m.variance.iter().all(|&v| v == 0.0));
        assert_eq!(m.paths, 8);
    }

    #[test]
    fn zero_step_process_isometry_is_trivial() {
        let s = MildSolver::new(spec(heat(), NemytskiiFn::zero(), NemytskiiFn::zero()), config()).unwrap();
        let r = s
            .ito_isometry_test(&StepProcess::zero(*s.spec().grid(), s.steps()), 20)
            .unwrap();
        assert_eq!(r.mc_mean, 0.0);
        assert_eq!(r.hs_sum, 0.0);
        assert!(r.passes);
    }

    #[test]
    fn crosscheck_rejects_state_dependent_noise() {
        let s = MildSolver::new(spec(heat(), NemytskiiFn::zero(), NemytskiiFn::identity()), config()).unwrap();
        assert!(matches!(s.linear_crosscheck(0), Err(Error::Precondition(_))));
        let s = MildSolver::new(spec(heat(), forcing(), NemytskiiFn::zero()), config()).unwrap();
        let r = s.linear_crosscheck(0).unwrap();
        assert_eq!(r.relative_l2, 0.0);
    }

    #[test]
    fn invalid_ranges_are_rejected() {
        let mut sp = spec(heat(), NemytskiiFn::zero(), NemytskiiFn::zero());
        sp.lambda = 0.6;
        assert!(MildSolver::new(sp.clone(), config()).is_err());
        let rep = check_hypotheses(&sp).unwrap();
        let lam = rep.checks.iter().find(|c| c.name == "lambda_range").unwrap();
        assert!(!lam.passed);
        assert!(lam.detail.contains("not in [0,1/2)"));
    }
}
