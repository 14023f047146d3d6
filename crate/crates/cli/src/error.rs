use thiserror::Error;

/// Exit statuses of the `sgspde` binary.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const HYPOTHESIS: i32 = 2;
    pub const NONCONVERGENCE: i32 = 3;
    pub const INPUT: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Manifest(String),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: sgspde::Error,
    },
    #[error("hypothesis check failed: {0}")]
    Hypothesis(String),
}

impl CliError {
    pub fn core(context: impl Into<String>) -> impl FnOnce(sgspde::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Core { context, source }
    }

    pub fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |e| CliError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Manifest(_) | CliError::Io { .. } => exit::INPUT,
            CliError::Hypothesis(_) => exit::HYPOTHESIS,
            CliError::Core { source, .. } => core_exit_code(source),
        }
    }
}

fn core_exit_code(e: &sgspde::Error) -> i32 {
    use sgspde::Error as E;
    match e {
        E::AtTime { source, .. } => core_exit_code(source),
        E::Nonconvergence { .. }
        | E::TooManyPathFailures { .. }
        | E::NoAdmissibleHorizon { .. }
        | E::OutOfNeighborhood { .. }
        | E::NonFinite(_)
        | E::Overflow(_) => exit::NONCONVERGENCE,
        E::NotParabolic { .. } | E::InvalidMeasure(_) | E::MissingHypoOrder | E::RankDeficient { .. } => exit::HYPOTHESIS,
        _ => exit::INPUT,
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
