use thiserror::Error;

/// Errors raised by the numerical kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid mismatch: {left} vs {right}")]
    GridMismatch { left: String, right: String },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("overflow while computing {0}")]
    Overflow(String),
    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },
    #[error("time ordering violated: t = {t} < s = {s}")]
    TimeOrdering { t: f64, s: f64 },
    #[error("derivative order {requested} exceeds the supported limit {limit}")]
    DerivativeOrderLimit { requested: usize, limit: usize },
    #[error("symbol has no declared hypoellipticity order")]
    MissingHypoOrder,
    #[error("operator is not SG-parabolic on the sampled region: C = {constant:e} at x = {x:?}, xi = {xi:?}, t = {t}")]
    NotParabolic {
        constant: f64,
        x: Vec<f64>,
        xi: Vec<f64>,
        t: f64,
    },
    #[error("finite-difference step {step:e} too small for the interval t - s = {interval:e}")]
    StepTooSmall { step: f64, interval: f64 },
    #[error("invalid spectral measure: {0}")]
    InvalidMeasure(String),
    #[error("rank deficiency: requested {requested} basis functions, measure supports only {available}")]
    RankDeficient { requested: usize, available: usize },
    #[error("state leaves the locality neighbourhood: norm {norm:e} > radius {radius:e}")]
    OutOfNeighborhood { norm: f64, radius: f64 },
    #[error("at t = {time}: {source}")]
    AtTime { time: f64, source: Box<Error> },
    #[error("Picard iteration did not converge after {iterations} iterations (last residual {last:e})")]
    Nonconvergence {
        iterations: usize,
        last: f64,
        residuals: Vec<f64>,
    },
    #[error("{failed} of {total} paths failed (limit 10%)")]
    TooManyPathFailures { failed: usize, total: usize },
    #[error("no admissible horizon above dt = {dt}: sweep {sweep:?}")]
    NoAdmissibleHorizon { dt: f64, sweep: Vec<(f64, f64)> },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("expression parse error at column {column}: {message}")]
    Parse { column: usize, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn at_time(self, time: f64) -> Error {
        match self {
            e @ Error::AtTime { .. } => e,
            e => Error::AtTime {
                time,
                source: Box::new(e),
            },
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
