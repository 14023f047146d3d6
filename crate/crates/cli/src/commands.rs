use std::path::PathBuf;

use serde::Serialize;
use sgspde::field_io::{write_field, Dtype, Layout};
use sgspde::fundsol::{decay_bound_check, residual_check, DecayReport};
use sgspde::solver::{check_hypotheses, ContractionCertificate, CrosscheckReport, HorizonEstimate, HypothesisReport, IsometryReport};
use sgspde::{build_basis, check_spectral_condition, apply_nemytskii, MildSolver, SolverConfig, StepProcess};

use crate::error::{exit, CliError, CliResult};
use crate::manifest::LoadedRun;
use crate::output::{OutDir, Table};

/// Per-invocation overrides from the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub snapshots: bool,
}

/// What a command produced: an exit status and a short human summary.
#[derive(Debug)]
pub struct Outcome {
    pub code: i32,
    pub summary: String,
}

fn apply(config: &mut SolverConfig, o: &Overrides) {
    if let Some(s) = o.seed {
        config.seed = s;
    }
    if let Some(p) = o.paths {
        config.paths = p;
    }
}

fn hypothesis_summary(r: &HypothesisReport) -> String {
    r.checks
        .iter()
        .map(|c| format!("{:<22} {}  {}", c.name, if c.passed { "pass" } else { "FAIL" }, c.detail))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn check(run: &LoadedRun, out: &OutDir) -> CliResult<Outcome> {
    let report = check_hypotheses(&run.spec).map_err(CliError::core("check"))?;
    out.write_json("check.json", &report)?;
    Ok(Outcome {
        code: if report.all_passed() { exit::SUCCESS } else { exit::HYPOTHESIS },
        summary: hypothesis_summary(&report),
    })
}

#[derive(Serialize)]
struct SimulationSummary<'a> {
    config: SolverConfig,
    requested_horizon: f64,
    horizon: &'a HorizonEstimate,
    certificate: &'a ContractionCertificate,
    paths: usize,
    failed: usize,
    max_q_hat: f64,
    max_iterations: usize,
    snapshots: Option<Vec<String>>,
}

pub fn simulate(run: &LoadedRun, out: &OutDir, o: &Overrides) -> CliResult<Outcome> {
    let report = check_hypotheses(&run.spec).map_err(CliError::core("check"))?;
    out.write_json("check.json", &report)?;
    if !report.all_passed() {
        return Err(CliError::Hypothesis(hypothesis_summary(&report)));
    }
    let mut config = run.config;
    apply(&mut config, o);
    let solver = MildSolver::new(run.spec.clone(), config).map_err(CliError::core("solver"))?;
    let estimate = solver.estimate_t0().map_err(CliError::core("horizon sweep"))?;
    let solver = solver.with_horizon(estimate.t0).map_err(CliError::core("solver"))?;
    let certificate = solver.certify().map_err(CliError::core("certificate"))?;
    if !certificate.holds {
        return Err(CliError::Core {
            context: "certificate".into(),
            source: sgspde::Error::NoAdmissibleHorizon {
                dt: config.dt,
                sweep: vec![(certificate.t0, certificate.q_hat)],
            },
        });
    }
    let moments = solver.mc_moments().map_err(CliError::core("moments"))?;
    let mut table = Table::new(&["t", "mean", "variance", "std_error"]);
    for n in 0..moments.times.len() {
        table.push(vec![moments.times[n], moments.mean[n], moments.variance[n], moments.std_error[n]]);
    }
    out.write_table("moments.csv", &table)?;

    let snapshots = if o.snapshots {
        let dir = out.subdir("snapshots")?;
        let path = solver.noise_path(0).map_err(CliError::core("snapshots"))?;
        let sol = solver.solve_path(&path).map_err(CliError::core("snapshots"))?;
        let mut names = Vec::new();
        for (n, u) in sol.states.iter().enumerate() {
            let name = format!("path0_step{n:05}.bin");
            write_field(&dir.join(&name), u, Dtype::Complex128, Layout::Spatial).map_err(CliError::core("snapshots"))?;
            names.push(name);
        }
        Some(names)
    } else {
        None
    };

    let summary = SimulationSummary {
        config,
        requested_horizon: run.spec.horizon,
        horizon: &estimate,
        certificate: &certificate,
        paths: moments.paths,
        failed: moments.failed,
        max_q_hat: moments.max_q_hat,
        max_iterations: moments.max_iterations,
        snapshots,
    };
    out.write_json("summary.json", &summary)?;
    Ok(Outcome {
        code: exit::SUCCESS,
        summary: format!(
            "T0 = {} (q = {:.4}), certified q = {:.4}; {} paths, {} failed; E|u(T0)|^2 = {:.6e}",
            estimate.t0,
            estimate.q_hat,
            certificate.q_hat,
            moments.paths,
            moments.failed,
            moments.mean.last().copied().unwrap_or(f64::NAN)
        ),
    })
}

#[derive(Serialize)]
struct Property<T: Serialize> {
    name: &'static str,
    status: &'static str,
    detail: String,
    report: Option<T>,
}

fn property<T: Serialize>(name: &'static str, passed: Option<bool>, detail: String, report: Option<T>) -> Property<T> {
    let status = match passed {
        Some(true) => "pass",
        Some(false) => "fail",
        None => "skipped",
    };
    Property {
        name,
        status,
        detail,
        report,
    }
}

#[derive(Serialize)]
struct ResidualSummary {
    lags: Vec<f64>,
    residuals: Vec<f64>,
    exponent: Option<f64>,
}

#[derive(Serialize)]
struct VerifyReport {
    residual: Property<ResidualSummary>,
    decay: Property<DecayReport>,
    isometry: Property<IsometryReport>,
    crosscheck: Property<CrosscheckReport>,
}

/// Residual tolerance for symbols without `x` dependence.
pub const RESIDUAL_TOLERANCE: f64 = 1e-6;
/// Accepted range of the residual's exponent in the lag.
pub const RESIDUAL_EXPONENT_RANGE: (f64, f64) = (0.7, 1.3);

fn log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    cov / var
}

pub fn verify(run: &LoadedRun, out: &OutDir, o: &Overrides) -> CliResult<Outcome> {
    let spec = &run.spec;
    let mut config = run.config;
    apply(&mut config, o);
    let solver = MildSolver::new(spec.clone(), config).map_err(CliError::core("solver"))?;
    let p = solver.propagator();

    let residual = if spec.generator.is_x_independent() {
        let r = residual_check(p, spec.horizon, 0.0, &spec.u0).map_err(CliError::core("residual"))?;
        property(
            "residual",
            Some(r.residual < RESIDUAL_TOLERANCE),
            format!("relative residual {:e} at t = {}", r.residual, spec.horizon),
            Some(ResidualSummary {
                lags: vec![spec.horizon],
                residuals: vec![r.residual],
                exponent: None,
            }),
        )
    } else {
        let lags: Vec<f64> = [1e-3, 2e-3, 4e-3, 8e-3].into_iter().filter(|&l| l <= spec.horizon).collect();
        let residuals = lags
            .iter()
            .map(|&l| residual_check(p, l, 0.0, &spec.u0).map(|r| r.residual))
            .collect::<sgspde::Result<Vec<f64>>>()
            .map_err(CliError::core("residual"))?;
        if lags.len() < 2 || residuals.iter().any(|&r| r <= 0.0) {
            property("residual", None, "horizon too short or zero residuals".into(), None::<ResidualSummary>)
        } else {
            let e = log_slope(&lags, &residuals);
            let (lo, hi) = RESIDUAL_EXPONENT_RANGE;
            property(
                "residual",
                Some((lo..=hi).contains(&e)),
                format!("residual exponent {e:.4} in the lag"),
                Some(ResidualSummary {
                    lags,
                    residuals,
                    exponent: Some(e),
                }),
            )
        }
    };

    let decay = decay_bound_check(p, spec.ell(), spec.lambda).map_err(CliError::core("decay"))?;
    let decay = property("decay", Some(decay.holds), format!("max ratio {:.6}", decay.max_ratio), Some(decay));

    let isometry = if spec.sigma.is_zero() {
        property("isometry", None, "sigma is zero".into(), None)
    } else {
        let w = apply_nemytskii(&spec.sigma, 0.0, &spec.u0).map_err(CliError::core("isometry"))?;
        let step = StepProcess::multiplier(w, solver.steps(), Some(solver.horizon()));
        let r = solver.ito_isometry_test(&step, config.paths).map_err(CliError::core("isometry"))?;
        property(
            "isometry",
            Some(r.passes),
            format!("mc {:.6e} vs hs {:.6e}, z = {:.3}", r.mc_mean, r.hs_sum, r.z_score),
            Some(r),
        )
    };

    let crosscheck = if spec.gamma.depends_on_u() || spec.sigma.depends_on_u() || spec.sigma.is_zero() {
        property("crosscheck", None, "needs a nonzero sigma and no u dependence".into(), None)
    } else {
        let r = solver.linear_crosscheck(0).map_err(CliError::core("crosscheck"))?;
        property(
            "crosscheck",
            Some(r.passes),
            format!("stochastic relative L2 {:.4e} at K = {}", r.stochastic_relative_l2, r.modes),
            Some(r),
        )
    };

    let report = VerifyReport {
        residual,
        decay,
        isometry,
        crosscheck,
    };
    out.write_json("verify.json", &report)?;
    let lines = [
        (report.residual.name, report.residual.status, &report.residual.detail),
        (report.decay.name, report.decay.status, &report.decay.detail),
        (report.isometry.name, report.isometry.status, &report.isometry.detail),
        (report.crosscheck.name, report.crosscheck.status, &report.crosscheck.detail),
    ];
    let failed = lines.iter().any(|l| l.1 == "fail");
    Ok(Outcome {
        code: if failed { exit::HYPOTHESIS } else { exit::SUCCESS },
        summary: lines
            .iter()
            .map(|(n, s, d)| format!("{n:<12} {s:<8} {d}"))
            .collect::<Vec<_>>()
            .join("\n"),
    })
}

#[derive(Serialize)]
struct BasisSummary {
    modes: usize,
    symmetric_dimension: usize,
    max_gram_deviation: f64,
    support: Vec<(Vec<f64>, f64)>,
    files: Vec<String>,
}

pub fn basis(run: &LoadedRun, out: &OutDir) -> CliResult<Outcome> {
    let m = &run.spec.measure;
    let b = build_basis(m, run.config.modes).map_err(CliError::core("basis"))?;
    let dir: PathBuf = out.subdir("basis")?;
    let mut files = Vec::new();
    for (k, f) in b.fields().iter().enumerate() {
        let name = format!("e{k:04}.bin");
        write_field(&dir.join(&name), f, Dtype::Complex128, Layout::Spatial).map_err(CliError::core("basis"))?;
        files.push(name);
    }
    let gram = b.gram_matrix();
    let dev = gram
        .iter()
        .enumerate()
        .flat_map(|(i, r)| r.iter().enumerate().map(move |(j, v)| (v - if i == j { 1.0 } else { 0.0 }).abs()))
        .fold(0.0, f64::max);
    let d = m.grid().dim();
    let summary = BasisSummary {
        modes: b.len(),
        symmetric_dimension: b.symmetric_dimension(),
        max_gram_deviation: dev,
        support: b.support().iter().map(|p| (p.xi[..d].to_vec(), p.weight)).collect(),
        files,
    };
    out.write_json("basis.json", &summary)?;
    Ok(Outcome {
        code: exit::SUCCESS,
        summary: format!(
            "{} basis fields of {} available, max Gram deviation {:.3e}",
            summary.modes, summary.symmetric_dimension, dev
        ),
    })
}

pub fn spectral(run: &LoadedRun, out: &OutDir) -> CliResult<Outcome> {
    let mu_prime = run.spec.mu_prime().map_err(CliError::core("spectral"))?;
    let mut table = Table::new(&["lambda", "value", "growth", "increment_ratio", "finite", "admissible"]);
    let mut lines = Vec::new();
    for &lambda in &run.manifest.spectral.lambdas {
        let r = check_spectral_condition(&run.spec.measure, lambda, mu_prime, None).map_err(CliError::core("spectral"))?;
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        table.push(vec![lambda, r.value, r.growth, r.increment_ratio, flag(r.finite), flag(r.admissible)]);
        lines.push(format!(
            "lambda {lambda:.3}: value {:.6e}, {}",
            r.value,
            if r.admissible { "admissible" } else if r.finite { "finite, lambda out of range" } else { "divergent" }
        ));
    }
    out.write_table("spectral.csv", &table)?;
    Ok(Outcome {
        code: exit::SUCCESS,
        summary: lines.join("\n"),
    })
}
