//! Numerical kernels for semilinear parabolic SPDEs driven by spatially
//! homogeneous Gaussian noise, with SG pseudodifferential generators.

pub mod error;
pub mod expr;
pub mod field_io;
pub mod fields;
pub mod fundsol;
pub mod grid;
pub mod nemytskii;
pub mod noise;
pub mod numeric;
pub mod sgcalc;
pub mod solver;

pub use error::{Error, Result};
pub use expr::Expr;
pub use fundsol::{Propagator, PropagatorSymbol};
pub use grid::{forward_dft, inverse_dft, quadrature, Field, Grid, Point, MAX_DIM};
pub use num_complex::Complex64;
pub use sgcalc::{apply_op, sk_norm, Order, SgSymbol, SobolevKatoIndex};
pub use nemytskii::{apply_nemytskii, verify_lip, LipParams, Locality, NemytskiiFn};
pub use noise::{build_basis, check_spectral_condition, hs_norm, sample_increments, Atom, CameronMartinBasis, NoisePath, SpectralMeasure};
pub use solver::{CauchyProblemSpec, MildSolver, PathSolution, SolverConfig, StepProcess};
