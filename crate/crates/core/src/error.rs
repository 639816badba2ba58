use std::path::PathBuf;

/// Errors raised anywhere in the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("rejected input: {0}")]
    RejectedInput(String),
    #[error("structural error: {0}")]
    Structural(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("resolution error: grid resolution {0} is below the minimum of 16")]
    Resolution(usize),
    #[error("step-size error: dt = {dt:e} exceeds the stability bound {bound:e}")]
    StepSize { dt: f64, bound: f64 },
    #[error("pressure solver did not converge: residual {residual:e} after {iterations} iterations")]
    Solver { residual: f64, iterations: usize },
    #[error("steady state not reached after {steps} steps (last change rate {last_rate:e})")]
    Divergence { steps: usize, last_rate: f64, history: Vec<f64> },
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("provenance error: {0}")]
    Provenance(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("non-finite loss at iteration {iteration} in component {component}")]
    NonFiniteLoss { iteration: usize, component: &'static str },
    #[error("parameter collapse at iteration {iteration}: Re = {re:e}, Pe = {pe:e}")]
    ParameterCollapse { iteration: usize, re: f64, pe: f64 },
    #[error("degenerate denominator: exact field is constant")]
    DegenerateDenominator,
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for failures of the numerics rather than of inputs or files.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Solver { .. }
                | Error::Divergence { .. }
                | Error::NonFiniteLoss { .. }
                | Error::ParameterCollapse { .. }
                | Error::StepSize { .. }
        )
    }

    /// True for failures reading or writing files.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Format(_) | Error::Csv(_) | Error::Json(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
