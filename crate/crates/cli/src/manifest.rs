//! TOML run manifests.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use sgspde::expr::{Env, Expr};
use sgspde::nemytskii::Locality;
use sgspde::{
    Atom, CauchyProblemSpec, Complex64, Field, Grid, LipParams, NemytskiiFn, Order, SgSymbol, SobolevKatoIndex,
    SolverConfig, SpectralMeasure,
};

use crate::error::{CliError, CliResult};
use crate::output::parse_csv;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    #[serde(default)]
    pub seed: Option<u64>,
    pub grid: GridSection,
    pub problem: ProblemSection,
    pub measure: MeasureSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub spectral: SpectralSection,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dim: usize,
    pub n: usize,
    pub half_width: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub generator: String,
    /// `[m, mu]`.
    pub order: [f64; 2],
    /// `[m', mu']`.
    pub hypo_order: [f64; 2],
    #[serde(default = "zero_expr")]
    pub gamma: String,
    #[serde(default = "zero_expr")]
    pub sigma: String,
    pub u0: String,
    pub horizon: f64,
    /// `[z, zeta]`.
    #[serde(default)]
    pub index: [f64; 2],
    #[serde(default)]
    pub kappa: f64,
    pub lambda: f64,
    #[serde(default)]
    pub gamma_lip: NonlinearitySection,
    #[serde(default)]
    pub sigma_lip: NonlinearitySection,
}

fn zero_expr() -> String {
    "0".into()
}

/// Declared Lipschitz data of a nonlinearity.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearitySection {
    /// `[z, zeta, r, rho]`; defaults to the class the problem requires.
    pub params: Option<[f64; 4]>,
    /// Constant modulus `C(t)`; defaults to 1.
    pub modulus: Option<f64>,
    /// Radius of the neighbourhood of `u0` on which the bounds are claimed.
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSection {
    pub density: Option<String>,
    #[serde(default)]
    pub atoms: Vec<AtomSection>,
    /// CSV of density samples on the frequency grid, relative to the manifest.
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSection {
    pub location: Vec<f64>,
    pub mass: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "defaults::dt")]
    pub dt: f64,
    #[serde(default = "defaults::modes")]
    pub modes: usize,
    #[serde(default = "defaults::tolerance")]
    pub tolerance: f64,
    #[serde(default = "defaults::max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "defaults::paths")]
    pub paths: usize,
}

mod defaults {
    use sgspde::SolverConfig;

    pub fn dt() -> f64 {
        SolverConfig::default().dt
    }
    pub fn modes() -> usize {
        SolverConfig::default().modes
    }
    pub fn tolerance() -> f64 {
        SolverConfig::default().tolerance
    }
    pub fn max_iterations() -> usize {
        SolverConfig::default().max_iterations
    }
    pub fn paths() -> usize {
        SolverConfig::default().paths
    }
}

impl Default for SolverSection {
    fn default() -> Self {
        let c = SolverConfig::default();
        Self {
            dt: c.dt,
            modes: c.modes,
            tolerance: c.tolerance,
            max_iterations: c.max_iterations,
            paths: c.paths,
        }
    }
}

/// Options of the `spectral` command.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralSection {
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
}

impl Default for SpectralSection {
    fn default() -> Self {
        Self {
            lambdas: default_lambdas(),
        }
    }
}

fn default_lambdas() -> Vec<f64> {
    (0..10).map(|i| 0.05 * i as f64).collect()
}

/// A manifest with its expressions parsed and its problem assembled.
pub struct LoadedRun {
    pub manifest: RunManifest,
    pub spec: CauchyProblemSpec,
    pub config: SolverConfig,
}

impl RunManifest {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Manifest(format!("manifest: {e}")))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        let mut m = Self::parse(&text)?;
        if let Some(file) = &m.measure.file {
            if file.is_relative() {
                if let Some(dir) = path.parent() {
                    m.measure.file = Some(dir.join(file));
                }
            }
        }
        Ok(m)
    }

    pub fn grid(&self) -> CliResult<Grid> {
        Grid::new(self.grid.dim, self.grid.n, self.grid.half_width).map_err(CliError::core("grid"))
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            dt: self.solver.dt,
            modes: self.solver.modes,
            tolerance: self.solver.tolerance,
            max_iterations: self.solver.max_iterations,
            paths: self.solver.paths,
            seed: self.seed.unwrap_or(0),
        }
    }

    pub fn generator(&self) -> CliResult<SgSymbol> {
        let p = &self.problem;
        let expr = parse_expr("problem.generator", &p.generator)?;
        let order = Order::new(p.order[0], p.order[1]);
        SgSymbol::from_expr(&expr, order)
            .and_then(|s| s.with_hypo_order(Order::new(p.hypo_order[0], p.hypo_order[1])))
            .map_err(CliError::core("problem.generator"))
    }

    pub fn measure(&self, grid: Grid) -> CliResult<SpectralMeasure> {
        let m = &self.measure;
        let atoms: Vec<Atom> = m.atoms.iter().map(|a| Atom::new(a.location.clone(), a.mass)).collect();
        for a in &atoms {
            if a.location.len() != grid.dim() {
                return Err(CliError::Manifest(format!(
                    "measure.atoms: location {:?} does not have dimension {}",
                    a.location,
                    grid.dim()
                )));
            }
        }
        let built = match (&m.density, &m.file) {
            (Some(_), Some(_)) => {
                return Err(CliError::Manifest("measure: give either density or file, not both".into()));
            }
            (Some(src), None) => {
                let e = parse_expr("measure.density", src)?;
                if e.dependence().x || e.dependence().u || e.dependence().t {
                    return Err(CliError::Manifest("measure.density may only depend on xi".into()));
                }
                SpectralMeasure::new(grid, Some(move |xi: &[f64]| e.eval(&Env::new(0.0, &[], xi)).re), atoms)
            }
            (None, Some(path)) => {
                let table = read_density_file(path, grid)?;
                SpectralMeasure::new(grid, Some(move |xi: &[f64]| table.lookup(xi)), atoms)
            }
            (None, None) if !atoms.is_empty() => SpectralMeasure::from_atoms(grid, atoms),
            (None, None) => {
                return Err(CliError::Manifest("measure: needs a density, a file or atoms".into()));
            }
        };
        built.map_err(CliError::core("measure"))
    }

    fn nonlinearity(&self, name: &str, src: &str, section: &NonlinearitySection, required: LipParams, u0: &Field) -> CliResult<NemytskiiFn> {
        let expr = parse_expr(&format!("problem.{name}"), src)?;
        let lip = match section.params {
            Some([z, zeta, r, rho]) => LipParams::new(z, zeta, r, rho).map_err(CliError::core(format!("problem.{name}_lip")))?,
            None => required,
        };
        let mut g = NemytskiiFn::from_expr(&expr, lip).map_err(CliError::core(format!("problem.{name}")))?;
        if g.is_zero() {
            return Ok(g);
        }
        if let Some(c) = section.modulus {
            g = g.with_constant_modulus(c);
        }
        if let Some(radius) = section.radius {
            g = g.with_locality(Locality::Ball {
                radius,
                center: u0.clone(),
            });
        }
        Ok(g)
    }

    /// Parses every expression and assembles the problem.
    pub fn load(self) -> CliResult<LoadedRun> {
        let grid = self.grid()?;
        let p = &self.problem;
        let generator = self.generator()?;
        let u0_expr = parse_expr("problem.u0", &p.u0)?;
        let dep = u0_expr.dependence();
        if dep.u || dep.xi || dep.t {
            return Err(CliError::Manifest("problem.u0 may only depend on x".into()));
        }
        let u0 = Field::from_fn(grid, |x| u0_expr.eval(&Env::new(0.0, x, &[]).with_u(Complex64::new(0.0, 0.0))))
            .map_err(CliError::core("problem.u0"))?;
        let kappa_m = p.kappa * p.hypo_order[0];
        let required = LipParams::new(p.index[0] - kappa_m, p.index[1], kappa_m, 0.0).unwrap_or_default();
        let gamma = self.nonlinearity("gamma", &p.gamma, &p.gamma_lip, required, &u0)?;
        let sigma = self.nonlinearity("sigma", &p.sigma, &p.sigma_lip, required, &u0)?;
        let spec = CauchyProblemSpec {
            generator,
            gamma,
            sigma,
            u0,
            measure: self.measure(grid)?,
            horizon: p.horizon,
            index: SobolevKatoIndex::new(p.index[0], p.index[1]),
            kappa: p.kappa,
            lambda: p.lambda,
        };
        let config = self.solver_config();
        Ok(LoadedRun {
            manifest: self,
            spec,
            config,
        })
    }
}

fn parse_expr(field: &str, src: &str) -> CliResult<Expr> {
    Expr::parse(src).map_err(|e| CliError::Manifest(format!("{field} = \"{src}\": {e}")))
}

/// Density samples keyed by grid frequency index; zero elsewhere.
struct DensityTable {
    grid: Grid,
    values: HashMap<usize, f64>,
}

impl DensityTable {
    fn index_of(&self, xi: &[f64]) -> Option<usize> {
        let g = &self.grid;
        let n = g.points_per_axis() as i64;
        let mut idx = [0usize; sgspde::MAX_DIM];
        for (a, &v) in xi.iter().enumerate().take(g.dim()) {
            let k = (v / g.freq_spacing()).round() as i64;
            if k < -n / 2 || k >= n / 2 || (v - k as f64 * g.freq_spacing()).abs() > 1e-6 * g.freq_spacing() {
                return None;
            }
            idx[a] = k.rem_euclid(n) as usize;
        }
        Some(g.flatten(&idx[..g.dim()]))
    }

    fn lookup(&self, xi: &[f64]) -> f64 {
        self.index_of(xi).and_then(|k| self.values.get(&k).copied()).unwrap_or(0.0)
    }
}

fn read_density_file(path: &Path, grid: Grid) -> CliResult<DensityTable> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    let (header, rows) = parse_csv(&text)?;
    if header.len() != grid.dim() + 1 {
        return Err(CliError::Manifest(format!(
            "{}: expected {} frequency columns and one density column",
            path.display(),
            grid.dim()
        )));
    }
    let mut table = DensityTable {
        grid,
        values: HashMap::new(),
    };
    for (i, row) in rows.iter().enumerate() {
        let k = table.index_of(&row[..grid.dim()]).ok_or_else(|| {
            CliError::Manifest(format!(
                "{} row {}: frequency {:?} is not a grid frequency",
                path.display(),
                i + 1,
                &row[..grid.dim()]
            ))
        })?;
        table.values.insert(k, row[grid.dim()]);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub const SG_HEAT: &str = r#"
seed = 1
[grid]
dim = 1
n = 32
half_width = 6.0
[problem]
generator = "<x>^2 * <xi>^2"
order = [2.0, 2.0]
hypo_order = [2.0, 2.0]
sigma = "<x>^(-1) * u"
u0 = "0.2 * exp(-x^2)"
horizon = 0.2
lambda = 0.25
[measure]
atoms = [{ location = [0.0], mass = 1.0 }]
"#;

    #[test]
    fn manifest_loads_into_a_problem() {
        let run = RunManifest::parse(SG_HEAT).unwrap().load().unwrap();
        assert_eq!(run.spec.grid().points_per_axis(), 32);
        assert!(run.spec.gamma.is_zero());
        assert!(run.spec.sigma.depends_on_u());
        assert_eq!(run.spec.measure.symmetric_dimension(), 1);
        assert_eq!(run.config.seed, 1);
    }

    #[test]
    fn parse_errors_carry_a_position() {
        let err = RunManifest::parse("[grid]\ndim = 1\nn = \n").unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        let bad = SG_HEAT.replace("<x>^(-1) * u", "<x>^(-1) * * u");
        let err = RunManifest::parse(&bad).unwrap().load().err().unwrap().to_string();
        assert!(err.contains("problem.sigma") && err.contains("column"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = SG_HEAT.replace("lambda = 0.25", "lambda = 0.25\nlamda = 0.1");
        assert!(RunManifest::parse(&bad).is_err());
    }

    #[test]
    fn asymmetric_atoms_are_rejected() {
        let bad = SG_HEAT.replace("location = [0.0]", "location = [0.5]");
        let err = RunManifest::parse(&bad).unwrap().load().err().unwrap();
        assert!(err.to_string().contains("symmetric"), "{err}");
        assert_eq!(err.exit_code(), crate::error::exit::HYPOTHESIS);
    }
}
